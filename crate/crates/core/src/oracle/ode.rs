//! Classical Runge-Kutta integration of differential classes.

use crate::program::{ClassId, Kind, Program};
use crate::scalar::Scalar;

use super::newton::{Frame, Workspace};

/// Uniform grid of a differential solution on `[0, x]`.
#[derive(Debug, Clone)]
pub struct OdeGrid<F> {
    /// Class names of the state components, in state order.
    pub classes: Vec<String>,
    pub(crate) ids: Vec<ClassId>,
    pub x: F,
    pub steps: usize,
    /// `values[i][s]`: component `s` at `t = i * x / steps`.
    pub values: Vec<Vec<F>>,
    pub derivatives: Vec<Vec<F>>,
}

impl<F: Scalar> OdeGrid<F> {
    pub fn step(&self) -> F {
        self.x / F::from_usize_lossy(self.steps)
    }

    pub fn component(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// `(t, value)` pairs of one component.
    pub fn points(&self, component: usize) -> Vec<(F, F)> {
        let h = self.step();
        self.values.iter().enumerate().map(|(i, v)| (F::from_usize_lossy(i) * h, v[component])).collect()
    }

    /// Cubic Hermite interpolation of one component at `t` in `[0, x]`.
    pub fn value_at(&self, component: usize, t: F) -> F {
        let h = self.step();
        let pos = (t / h).max(F::zero()).min(F::from_usize_lossy(self.steps));
        let i = pos.floor().to_usize().unwrap_or(0).min(self.steps.saturating_sub(1));
        let s = pos - F::from_usize_lossy(i);
        let (y0, y1) = (self.values[i][component], self.values[i + 1][component]);
        let (d0, d1) = (self.derivatives[i][component] * h, self.derivatives[i + 1][component] * h);
        let two = F::lit(2.0);
        let three = F::lit(3.0);
        let s2 = s * s;
        let s3 = s2 * s;
        (two * s3 - three * s2 + F::one()) * y0 + (s3 - two * s2 + s) * d0 + (three * s2 - two * s3) * y1 + (s3 - s2) * d1
    }

    pub fn state_at(&self, t: F) -> Vec<F> {
        (0..self.ids.len()).map(|c| self.value_at(c, t)).collect()
    }
}

/// Right-hand side `t -> F(t, state)` of the differential classes in
/// `classes`, solving the plain classes by Newton at every call.
pub(crate) struct OdeSystem<'a, F> {
    pub prog: &'a Program,
    pub classes: &'a [bool],
    pub ids: Vec<ClassId>,
    pub tol: F,
    pub cap: F,
    pub max_iterations: usize,
    ws: Workspace<F>,
    fixed: Vec<F>,
    atoms: Vec<F>,
    no_nodes: Vec<bool>,
    no_tail: Vec<F>,
}

impl<'a, F: Scalar> OdeSystem<'a, F> {
    pub fn new(prog: &'a Program, classes: &'a [bool], tol: F, cap: F, max_iterations: usize) -> Self {
        let ids = (0..prog.class_count()).filter(|&c| classes[c] && prog.is_differential(c)).collect();
        OdeSystem {
            prog,
            classes,
            ids,
            tol,
            cap,
            max_iterations,
            ws: Workspace::default(),
            fixed: vec![F::nan(); prog.class_count()],
            atoms: vec![F::zero(); prog.atoms.len()],
            no_nodes: vec![false; prog.nodes.len()],
            no_tail: vec![F::zero(); prog.nodes.len()],
        }
    }

    pub fn initial(&self) -> Vec<F> {
        self.ids
            .iter()
            .map(|&c| match self.prog.kinds[c] {
                Kind::Differential { initial_count } => F::lit(initial_count as f64),
                Kind::Plain => unreachable!(),
            })
            .collect()
    }

    /// Solves the plain classes at `t` with the differential classes fixed
    /// to `state`; node values are left in the workspace.
    pub fn solve_at(&mut self, t: F, state: &[F]) -> Result<&Workspace<F>, String> {
        for (k, &c) in self.ids.iter().enumerate() {
            if !(state[k].is_finite() && state[k] <= self.cap) {
                return Err(format!("class `{}` exceeds the cap", self.prog.names[c]));
            }
            self.fixed[c] = state[k];
        }
        for (a, &w) in self.atoms.iter_mut().zip(&self.prog.weights) {
            *a = F::lit(w) * t;
        }
        let frame = Frame {
            prog: self.prog,
            classes: self.classes,
            extra_nodes: &self.no_nodes,
            atoms: &self.atoms,
            fixed: &self.fixed,
            mset_tail: &self.no_tail,
            cap: self.cap,
        };
        frame.solve_in(&mut self.ws, self.tol, self.max_iterations)?;
        Ok(&self.ws)
    }

    pub fn rhs(&mut self, t: F, state: &[F], out: &mut [F]) -> Result<(), String> {
        self.solve_at(t, state)?;
        for (k, &c) in self.ids.iter().enumerate() {
            out[k] = self.ws.nodes[self.prog.roots[c]];
        }
        Ok(())
    }

    /// One classical RK4 step from `y` with start derivative `k1`.
    pub fn rk4_step(&mut self, t: F, y: &[F], h: F, k1: &[F], out: &mut [F]) -> Result<(), String> {
        self.rk4_increment(t, y, h, k1, out)?;
        for (o, &v) in out.iter_mut().zip(y) {
            *o = v + *o;
        }
        Ok(())
    }

    /// The change of `y` over one RK4 step.
    fn rk4_increment(&mut self, t: F, y: &[F], h: F, k1: &[F], out: &mut [F]) -> Result<(), String> {
        let d = y.len();
        let half = h / F::lit(2.0);
        let mut tmp = vec![F::zero(); d];
        let mut k2 = vec![F::zero(); d];
        let mut k3 = vec![F::zero(); d];
        let mut k4 = vec![F::zero(); d];
        for i in 0..d {
            tmp[i] = y[i] + half * k1[i];
        }
        self.rhs(t + half, &tmp, &mut k2)?;
        for i in 0..d {
            tmp[i] = y[i] + half * k2[i];
        }
        self.rhs(t + half, &tmp, &mut k3)?;
        for i in 0..d {
            tmp[i] = y[i] + h * k3[i];
        }
        self.rhs(t + h, &tmp, &mut k4)?;
        let six = F::lit(6.0);
        let two = F::lit(2.0);
        for i in 0..d {
            out[i] = h / six * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        Ok(())
    }

    /// Fixed-step RK4 on `[0, x]`; returns values and derivatives on the grid.
    pub fn integrate(&mut self, x: F, steps: usize) -> Result<(Vec<Vec<F>>, Vec<Vec<F>>), String> {
        let d = self.ids.len();
        let h = x / F::from_usize_lossy(steps);
        let mut values = Vec::with_capacity(steps + 1);
        let mut derivs = Vec::with_capacity(steps + 1);
        let mut y = self.initial();
        let mut k1 = vec![F::zero(); d];
        let mut delta = vec![F::zero(); d];
        // compensated summation keeps round-off flat on fine grids
        let mut carry = vec![F::zero(); d];
        self.rhs(F::zero(), &y, &mut k1)?;
        for i in 0..steps {
            let t = F::from_usize_lossy(i) * h;
            self.rk4_increment(t, &y, h, &k1, &mut delta)?;
            let mut next = y.clone();
            for j in 0..d {
                let inc = delta[j] - carry[j];
                let sum = y[j] + inc;
                carry[j] = (sum - y[j]) - inc;
                next[j] = sum;
            }
            values.push(std::mem::replace(&mut y, next));
            derivs.push(k1.clone());
            self.rhs(t + h, &y, &mut k1)?;
        }
        values.push(y);
        derivs.push(k1);
        Ok((values, derivs))
    }

    /// Integrates with step halving until two successive grids agree
    /// within the tolerance at every shared point.
    pub fn refine(&mut self, x: F, max_steps: usize) -> Result<OdeGrid<F>, String> {
        let mut steps = 16;
        let mut values = self.integrate(x, steps)?.0;
        let derivatives = loop {
            if steps * 2 > max_steps {
                return Err(format!("Runge-Kutta grids still disagree at {steps} steps"));
            }
            let (fine, fine_d) = self.integrate(x, steps * 2)?;
            let agree = values.iter().enumerate().all(|(i, v)| {
                v.iter().zip(&fine[2 * i]).all(|(&a, &b)| crate::scalar::rel_diff(a, b) <= self.tol)
            });
            steps *= 2;
            values = fine;
            if agree {
                break fine_d;
            }
        };
        Ok(OdeGrid {
            classes: self.ids.iter().map(|&c| self.prog.names[c].clone()).collect(),
            ids: self.ids.clone(),
            x,
            steps,
            values,
            derivatives,
        })
    }

    /// Adaptive RK4 (step doubling) from 0 until the solution or the plain
    /// classes stop existing. Returns the last reached point and the step
    /// in use there, or `None` if `limit` is reached first.
    pub fn blow_up(&mut self, limit: F) -> Option<(F, F)> {
        let d = self.ids.len();
        let mut y = self.initial();
        let mut t = F::zero();
        let mut h = F::lit(1e-3);
        let mut k1 = vec![F::zero(); d];
        if self.rhs(t, &y, &mut k1).is_err() {
            return Some((t, h));
        }
        let tol = F::lit(1e-10).max(self.tol);
        let mut full = vec![F::zero(); d];
        let mut mid = vec![F::zero(); d];
        let mut two = vec![F::zero(); d];
        let mut kmid = vec![F::zero(); d];
        while t < limit {
            if h < F::epsilon() * F::lit(4.0) * t.max(F::one()) {
                return Some((t, h));
            }
            let half = h / F::lit(2.0);
            let ok = self.rk4_step(t, &y, h, &k1, &mut full).is_ok()
                && self.rk4_step(t, &y, half, &k1, &mut mid).is_ok()
                && self.rhs(t + half, &mid, &mut kmid).is_ok()
                && self.rk4_step(t + half, &mid, half, &kmid, &mut two).is_ok();
            if !ok {
                h = half;
                continue;
            }
            let err = full.iter().zip(&two).fold(F::zero(), |m, (&a, &b)| m.max(crate::scalar::rel_diff(a, b)));
            if err > tol {
                h = half;
                continue;
            }
            let mut next_k = vec![F::zero(); d];
            if self.rhs(t + h, &two, &mut next_k).is_err() {
                h = half;
                continue;
            }
            t = t + h;
            y.copy_from_slice(&two);
            k1 = next_k;
            if err < tol / F::lit(64.0) {
                h = h * F::lit(2.0);
            }
        }
        None
    }
}
