//! Evaluation of the construction operators and Newton iteration on the
//! class system `y = Phi(y)`.

use crate::linalg::Lu;
use crate::program::{Kind, Op, Program};
use crate::scalar::Scalar;

/// What is known at one evaluation point.
pub(crate) struct Frame<'a, F> {
    pub prog: &'a Program,
    /// Classes whose values are wanted (and whose nodes are evaluated).
    pub classes: &'a [bool],
    /// Extra nodes evaluated after the classes are solved; their values do
    /// not feed back into the system.
    pub extra_nodes: &'a [bool],
    pub atoms: &'a [F],
    /// Values of differential classes, fixed by the caller.
    pub fixed: &'a [F],
    /// For every MSet node, `sum_{j >= 2} A(x^j) / j` at this point.
    pub mset_tail: &'a [F],
    pub cap: F,
}

pub(crate) struct Solution<F> {
    pub classes: Vec<F>,
    pub nodes: Vec<F>,
    pub iterations: usize,
    pub residuals: Vec<F>,
}

impl<F: Scalar> Frame<'_, F> {
    fn node_active(&self, n: usize) -> bool {
        self.classes[self.prog.owner[n]] || self.extra_nodes[n]
    }

    /// Forward pass over all active nodes. When `grad` is given (with the
    /// unknown index of every class), dense gradients with respect to the
    /// unknown class values are accumulated as well.
    pub fn eval(&self, y: &[F], nodes: &mut [F], mut grad: Option<(&[usize], usize, &mut [F])>) -> Result<(), String> {
        let one = F::one();
        for (i, op) in self.prog.nodes.iter().enumerate() {
            if !self.node_active(i) {
                continue;
            }
            let v = match *op {
                Op::Empty => one,
                Op::Atom(a) => self.atoms[a],
                Op::Ref(c) => y[c],
                Op::Union(a, b) => nodes[a] + nodes[b],
                Op::Product(a, b) => nodes[a] * nodes[b],
                Op::Seq(a) => {
                    if !(nodes[a] < one) {
                        return Err(format!("Seq argument reached {} in class `{}`", nodes[a], self.prog.names[self.prog.owner[i]]));
                    }
                    one / (one - nodes[a])
                }
                Op::Cycle(a) => {
                    if !(nodes[a] < one) {
                        return Err(format!("Cycle argument reached {} in class `{}`", nodes[a], self.prog.names[self.prog.owner[i]]));
                    }
                    -(-nodes[a]).ln_1p()
                }
                Op::Set(a) => nodes[a].exp(),
                Op::MSet(a) => (nodes[a] + self.mset_tail[i]).exp(),
            };
            if !v.is_finite() || (v > self.cap && i == self.prog.roots[self.prog.owner[i]] && !self.prog.is_differential(self.prog.owner[i])) {
                return Err(format!("value {} exceeds the cap in class `{}`", v, self.prog.names[self.prog.owner[i]]));
            }
            nodes[i] = v;
            if let Some((unknown, u, g)) = grad.as_mut() {
                let u = *u;
                let (lo, hi) = g.split_at_mut(i * u);
                let gi = &mut hi[..u];
                let row = |k: usize| &lo[k * u..(k + 1) * u];
                match *op {
                    Op::Empty | Op::Atom(_) => gi.fill(F::zero()),
                    Op::Ref(c) => {
                        gi.fill(F::zero());
                        if unknown[c] != usize::MAX {
                            gi[unknown[c]] = one;
                        }
                    }
                    Op::Union(a, b) => {
                        let (ga, gb) = (row(a), row(b));
                        for k in 0..u {
                            gi[k] = ga[k] + gb[k];
                        }
                    }
                    Op::Product(a, b) => {
                        let (ga, gb) = (row(a), row(b));
                        let (va, vb) = (nodes[a], nodes[b]);
                        for k in 0..u {
                            gi[k] = vb * ga[k] + va * gb[k];
                        }
                    }
                    Op::Seq(a) | Op::Cycle(a) | Op::Set(a) | Op::MSet(a) => {
                        let d = match *op {
                            Op::Seq(_) => v * v,
                            Op::Cycle(_) => one / (one - nodes[a]),
                            _ => v,
                        };
                        let ga = row(a);
                        for k in 0..u {
                            gi[k] = d * ga[k];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves for the plain classes in the frame, starting from zero.
    pub fn solve(&self, tol: F, max_iterations: usize) -> Result<Solution<F>, (String, Vec<F>)> {
        let mut ws = Workspace::default();
        match self.solve_in(&mut ws, tol, max_iterations) {
            Ok(iterations) => Ok(Solution { classes: ws.y, nodes: ws.nodes, iterations, residuals: ws.residuals }),
            Err(e) => Err((e, ws.residuals)),
        }
    }

    /// As `solve`, reusing the buffers of `ws`; the solution is left in
    /// `ws.y` and `ws.nodes`. Returns the iteration count.
    pub fn solve_in(&self, ws: &mut Workspace<F>, tol: F, max_iterations: usize) -> Result<usize, String> {
        let (iterations, minimal) = self.newton(ws, None, tol, max_iterations)?;
        if !minimal {
            return Err("fixed point is not the combinatorial solution".into());
        }
        Ok(iterations)
    }

    /// Newton iteration from `start` (zero when `None`). Returns the
    /// iteration count and whether `I - J` is an M-matrix at the limit,
    /// which singles out the least nonnegative fixed point.
    pub fn newton(&self, ws: &mut Workspace<F>, start: Option<&[F]>, tol: F, max_iterations: usize) -> Result<(usize, bool), String> {
        let prog = self.prog;
        let nc = prog.class_count();
        ws.unknown.clear();
        ws.unknown.resize(nc, usize::MAX);
        ws.order.clear();
        for c in 0..nc {
            if self.classes[c] && prog.kinds[c] == Kind::Plain {
                ws.unknown[c] = ws.order.len();
                ws.order.push(c);
            }
        }
        let u = ws.order.len();
        ws.y.clear();
        ws.y.extend((0..nc).map(|c| {
            if prog.is_differential(c) {
                self.fixed[c]
            } else {
                start.map_or(F::zero(), |s| s[c])
            }
        }));
        ws.nodes.clear();
        ws.nodes.resize(prog.nodes.len(), F::nan());
        ws.residuals.clear();
        if u == 0 {
            self.eval(&ws.y, &mut ws.nodes, None)?;
            ws.residuals.push(F::zero());
            return Ok((0, true));
        }
        ws.grad.clear();
        ws.grad.resize(prog.nodes.len() * u, F::zero());
        let tiny = F::epsilon() * F::lit(16.0);
        // once within tolerance, keep stepping while the residual still halves
        let mut polish = 0;
        for it in 0..=max_iterations {
            self.eval(&ws.y, &mut ws.nodes, Some((&ws.unknown, u, &mut ws.grad)))?;
            ws.rhs.clear();
            let mut residual = F::zero();
            for &c in &ws.order {
                let phi = ws.nodes[prog.roots[c]];
                let r = phi - ws.y[c];
                ws.rhs.push(r);
                residual = residual.max(r.abs() / F::one().max(phi.abs()));
            }
            let prev = ws.residuals.last().copied();
            ws.residuals.push(residual);
            if it == max_iterations {
                break;
            }
            let done = residual <= tol
                && (residual <= tiny || polish >= MAX_POLISH || prev.is_some_and(|p| p <= tol && !(residual < p / F::lit(2.0))));
            if residual <= tol {
                polish += 1;
            }
            let mut m = vec![F::zero(); u * u];
            for (i, &c) in ws.order.iter().enumerate() {
                let g = &ws.grad[prog.roots[c] * u..(prog.roots[c] + 1) * u];
                for k in 0..u {
                    m[i * u + k] = if i == k { F::one() } else { F::zero() } - g[k];
                }
            }
            let lu = Lu::factor(m, u, tiny).ok_or_else(|| "I - J became singular".to_string())?;
            let delta = lu.solve(&ws.rhs);
            for (k, &c) in ws.order.iter().enumerate() {
                ws.y[c] = ws.y[c] + delta[k];
            }
            if done {
                let minimal = lu.inverse_nonnegative();
                self.eval(&ws.y, &mut ws.nodes, None)?;
                if ws.order.iter().any(|&c| !(ws.y[c] >= -tol)) {
                    return Err("negative class value".into());
                }
                return Ok((it + 1, minimal));
            }
            if ws.y.iter().any(|v| !(v.is_nan() || (v.is_finite() && *v <= self.cap))) {
                return Err("iterate exceeds the cap".into());
            }
        }
        Err(format!("no convergence within {max_iterations} iterations"))
    }
}

/// Most extra Newton steps taken after the residual meets the tolerance.
const MAX_POLISH: usize = 4;

/// Scratch buffers for repeated solves.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace<F> {
    pub y: Vec<F>,
    pub nodes: Vec<F>,
    pub residuals: Vec<F>,
    unknown: Vec<usize>,
    order: Vec<usize>,
    grad: Vec<F>,
    rhs: Vec<F>,
}
