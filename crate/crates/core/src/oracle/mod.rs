//! Numerical evaluation of the generating functions of a spec.

mod levels;
mod newton;
mod ode;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::program::{ClassId, Program};
use crate::scalar::Scalar;
use crate::spec::{Spec, SpecError};
use crate::validate::{validate_spec, ExtNat};

pub(crate) use levels::{LevelShape, LevelSolver, LevelValues};
pub use ode::OdeGrid;
pub(crate) use ode::OdeSystem;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions<F> {
    pub tol: F,
    /// Any value above this counts as divergence.
    pub value_cap: F,
    pub max_iterations: usize,
    /// Most distinct points `x^k` one evaluation may use.
    pub max_levels: usize,
    pub max_ode_steps: usize,
}

impl<F: Scalar> Default for OracleOptions<F> {
    fn default() -> Self {
        OracleOptions {
            tol: F::default_tolerance(),
            value_cap: F::lit(1e9),
            max_iterations: 500,
            max_levels: 1 << 16,
            max_ode_steps: 1 << 22,
        }
    }
}

impl<F: Scalar> OracleOptions<F> {
    pub fn with_tol(tol: F) -> Self {
        OracleOptions { tol, ..Self::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("specification is not well-founded: {0}")]
    Invalid(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("evaluation diverged at x = {x}: {reason}")]
    Diverged { x: f64, reason: String },
    #[error("x = {x} is too close to the singularity of `{class}` for a derivative estimate")]
    TooCloseToSingularity { class: String, x: f64 },
    #[error("no parameter gives expected size {n} for `{class}` (minimum size {min})")]
    NoSolution { class: String, n: u64, min: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Diverged,
}

/// Class values at one parameter point.
#[derive(Debug, Clone)]
pub struct OracleTable<F> {
    pub x: F,
    pub tol: F,
    pub classes: Vec<String>,
    /// One entry per class of the spec; NaN for classes outside the
    /// evaluated subsystem or when diverged.
    pub values: Vec<F>,
    pub status: Status,
    pub iterations: usize,
    pub residual: F,
    pub residual_history: Vec<F>,
    pub ode_grid: Option<OdeGrid<F>>,
    /// Why evaluation diverged.
    pub reason: Option<String>,
    pub(crate) roots: Vec<ClassId>,
    pub(crate) levels: BTreeMap<u64, LevelValues<F>>,
}

impl<F: Scalar> OracleTable<F> {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn value(&self, class: &str) -> Option<F> {
        let i = self.classes.iter().position(|c| c == class)?;
        let v = self.values[i];
        (!v.is_nan()).then_some(v)
    }

    /// Number of distinct points `x^k` evaluated.
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }
}

/// Estimated radius of convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radius<F> {
    pub estimate: F,
    pub half_width: F,
    /// A point known to be inside the domain of convergence.
    pub lower: F,
    /// No divergence found below the search limit.
    pub entire: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult<F> {
    pub target: u64,
    pub x: F,
    pub achieved: F,
    pub radius: Radius<F>,
    /// Expected sizes stay below the target up to the singularity; `x` is
    /// then the singular parameter.
    pub singular: bool,
}

/// Fixed point reached by a restarted Newton iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart<F> {
    pub values: Vec<F>,
    pub iterations: usize,
    /// `I - J` is an M-matrix there, so this is the least fixed point.
    pub minimal: bool,
}

/// Smallest relative distance to the singularity `tune` evaluates at.
const MIN_TUNE_GAP: f64 = 1e-8;

/// Upper end of the radius search.
const RADIUS_LIMIT: f64 = 1e6;

/// Evaluator bound to one validated spec.
#[derive(Debug, Clone)]
pub struct Oracle<F: Scalar = f64> {
    prog: Program,
    min_sizes: Vec<ExtNat>,
    opts: OracleOptions<F>,
}

impl<F: Scalar> Oracle<F> {
    pub fn new(spec: &Spec, opts: OracleOptions<F>) -> Result<Self, OracleError> {
        let report = validate_spec(spec);
        if !report.ok {
            let msg = report.diagnostics.iter().map(|d| format!("{}: {}", d.class, d.reason)).collect::<Vec<_>>().join("; ");
            return Err(OracleError::Invalid(msg));
        }
        if !(opts.tol > F::zero()) {
            return Err(OracleError::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
        }
        let prog = Program::new(spec)?;
        let min_sizes = prog.names.iter().map(|n| report.min_sizes[n]).collect();
        Ok(Oracle { prog, min_sizes, opts })
    }

    pub fn options(&self) -> &OracleOptions<F> {
        &self.opts
    }

    pub fn class_names(&self) -> &[String] {
        &self.prog.names
    }

    fn class_id(&self, class: &str) -> Result<ClassId, OracleError> {
        self.prog.class_id(class).ok_or_else(|| SpecError::UnknownClass(class.to_string()).into())
    }

    pub fn min_size(&self, class: &str) -> Result<u64, OracleError> {
        Ok(self.min_sizes[self.class_id(class)?].finite().expect("validated"))
    }

    /// Values of every class at `x`.
    pub fn eval(&self, x: F) -> Result<OracleTable<F>, OracleError> {
        let all: Vec<ClassId> = (0..self.prog.class_count()).collect();
        self.eval_ids(&all, x)
    }

    /// Values of the given classes (and everything they refer to) at `x`.
    pub fn eval_classes(&self, classes: &[&str], x: F) -> Result<OracleTable<F>, OracleError> {
        let ids = classes.iter().map(|c| self.class_id(c)).collect::<Result<Vec<_>, _>>()?;
        self.eval_ids(&ids, x)
    }

    pub(crate) fn eval_ids(&self, roots: &[ClassId], x: F) -> Result<OracleTable<F>, OracleError> {
        if !(x > F::zero() && x.is_finite()) {
            return Err(OracleError::Parameter(format!("x must be positive and finite, got {x}")));
        }
        let prog = &self.prog;
        let shape = LevelShape::new(prog, roots);
        let mut table = OracleTable {
            x,
            tol: self.opts.tol,
            classes: prog.names.clone(),
            values: vec![F::nan(); prog.class_count()],
            status: Status::Diverged,
            iterations: 0,
            residual: F::infinity(),
            residual_history: Vec::new(),
            ode_grid: None,
            reason: None,
            roots: roots.to_vec(),
            levels: BTreeMap::new(),
        };
        let mut solver = LevelSolver {
            prog,
            shape: &shape,
            x,
            tol: self.opts.tol,
            cap: self.opts.value_cap,
            max_iterations: self.opts.max_iterations,
            max_levels: self.opts.max_levels,
            fixed: vec![F::nan(); prog.class_count()],
            memo: BTreeMap::new(),
        };
        if shape.has_mset() && !(solver.ratio() < F::one()) {
            return Err(OracleError::Parameter(format!("MSet classes need every atom value below 1, got x = {x}")));
        }
        if (0..prog.class_count()).any(|c| shape.top_classes[c] && prog.is_differential(c)) {
            let mut ode = OdeSystem::new(prog, &shape.top_classes, self.opts.tol, self.opts.value_cap, self.opts.max_iterations);
            match ode.refine(x, self.opts.max_ode_steps) {
                Ok(grid) => {
                    for (k, &c) in grid.ids.iter().enumerate() {
                        solver.fixed[c] = grid.values[grid.steps][k];
                    }
                    table.ode_grid = Some(grid);
                }
                Err(reason) => {
                    table.reason = Some(reason);
                    return Ok(table);
                }
            }
        }
        match solver.level(1) {
            Ok(()) => {
                let top = &solver.memo[&1];
                table.status = Status::Converged;
                table.iterations = top.iterations;
                table.residual = top.residuals.last().copied().unwrap_or(F::zero());
                table.residual_history = top.residuals.clone();
                for c in 0..prog.class_count() {
                    if shape.top_classes[c] {
                        table.values[c] = top.classes[c];
                    }
                }
            }
            Err((reason, history)) => {
                table.residual_history = history;
                table.reason = Some(reason);
                table.ode_grid = None;
            }
        }
        if table.converged() {
            table.levels = solver.memo;
        }
        Ok(table)
    }

    /// Runs Newton from `start` (one value per class) instead of zero and
    /// reports where it lands. Used to probe for other nonnegative fixed
    /// points; only specs without MSet or differential classes qualify.
    pub fn restart(&self, x: F, start: &[F]) -> Result<Restart<F>, OracleError> {
        let prog = &self.prog;
        let nc = prog.class_count();
        if start.len() != nc {
            return Err(OracleError::Parameter(format!("expected {nc} start values, got {}", start.len())));
        }
        if prog.mset_nodes().next().is_some() || (0..nc).any(|c| prog.is_differential(c)) {
            return Err(OracleError::Parameter("restarts need a spec without MSet or differential classes".into()));
        }
        let all = vec![true; nc];
        let none = vec![false; prog.nodes.len()];
        let atoms: Vec<F> = prog.weights.iter().map(|&w| F::lit(w) * x).collect();
        let fixed = vec![F::nan(); nc];
        let tail = vec![F::zero(); prog.nodes.len()];
        let frame = newton::Frame {
            prog,
            classes: &all,
            extra_nodes: &none,
            atoms: &atoms,
            fixed: &fixed,
            mset_tail: &tail,
            cap: self.opts.value_cap,
        };
        let mut ws = newton::Workspace::default();
        match frame.newton(&mut ws, Some(start), self.opts.tol, self.opts.max_iterations) {
            Ok((iterations, minimal)) => Ok(Restart { values: ws.y, iterations, minimal }),
            Err(reason) => Err(OracleError::Diverged { x: x.to_f64_lossy(), reason }),
        }
    }

    fn value_at(&self, c: ClassId, x: F) -> Option<F> {
        match self.eval_ids(&[c], x) {
            Ok(t) if t.converged() => Some(t.values[c]),
            _ => None,
        }
    }

    fn converges(&self, c: ClassId, x: F) -> bool {
        self.value_at(c, x).is_some()
    }

    /// Numerical `C'(x)`.
    ///
    /// Differential classes read the derivative off their right-hand side.
    /// Other classes use a five-point stencil: central with
    /// `h = min(1e-3 x, (lower - x) / 100)` when a radius is known, backward
    /// with `h = 1e-3 x` otherwise.
    pub fn eval_derivative(&self, class: &str, x: F, radius: Option<&Radius<F>>) -> Result<F, OracleError> {
        let c = self.class_id(class)?;
        if self.prog.is_differential(c) {
            let t = self.eval_ids(&[c], x)?;
            if !t.converged() {
                return Err(OracleError::Diverged { x: x.to_f64_lossy(), reason: t.reason.unwrap_or_default() });
            }
            return Ok(t.levels[&1].nodes[self.prog.roots[c]]);
        }
        let too_close = || OracleError::TooCloseToSingularity { class: class.to_string(), x: x.to_f64_lossy() };
        let mut h = F::lit(1e-3) * x;
        let central = radius.filter(|r| !r.entire).map(|r| r.lower);
        if let Some(lower) = central {
            h = h.min((lower - x) / F::lit(100.0));
            if !(h > F::zero()) {
                return Err(too_close());
            }
        }
        let twelve = F::lit(12.0);
        for _ in 0..2 {
            let f = |t: F| self.value_at(c, t);
            let d = if central.is_some() || radius.is_some_and(|r| r.entire) {
                let two = F::lit(2.0);
                let eight = F::lit(8.0);
                (|| Some((f(x - two * h)? - eight * f(x - h)? + eight * f(x + h)? - f(x + two * h)?) / (twelve * h)))()
            } else {
                let c = [25.0, -48.0, 36.0, -16.0, 3.0];
                (|| {
                    let mut s = F::zero();
                    for (k, w) in c.iter().enumerate() {
                        s = s + F::lit(*w) * f(x - F::from_usize_lossy(k) * h)?;
                    }
                    Some(s / (twelve * h))
                })()
            };
            if let Some(d) = d {
                return Ok(d);
            }
            h = h / F::lit(10.0);
        }
        Err(too_close())
    }

    /// `N(x) = x C'(x) / C(x)`.
    pub fn expected_size(&self, class: &str, x: F, radius: Option<&Radius<F>>) -> Result<F, OracleError> {
        let c = self.class_id(class)?;
        let v = self.value_at(c, x).ok_or_else(|| OracleError::Diverged { x: x.to_f64_lossy(), reason: "class value".into() })?;
        if v == F::zero() {
            return Err(OracleError::Parameter(format!("`{class}` has value 0 at x = {x}")));
        }
        Ok(x * self.eval_derivative(class, x, radius)? / v)
    }

    pub fn find_radius(&self, class: &str) -> Result<Radius<F>, OracleError> {
        let c = self.class_id(class)?;
        let limit = F::lit(RADIUS_LIMIT);
        let closure = self.prog.closure(&[c]);
        if (0..self.prog.class_count()).any(|d| closure[d] && self.prog.is_differential(d)) {
            let mut ode = OdeSystem::new(&self.prog, &closure, self.opts.tol, self.opts.value_cap, self.opts.max_iterations);
            return Ok(match ode.blow_up(limit) {
                None => Radius { estimate: F::infinity(), half_width: F::zero(), lower: limit, entire: true },
                Some((t, h)) => {
                    let half_width = h.max(F::lit(1e-9) * t);
                    Radius { estimate: t, half_width, lower: t - half_width, entire: false }
                }
            });
        }
        let mut lo = F::zero();
        let mut hi = F::lit(2f64.powi(-20));
        if self.converges(c, hi) {
            loop {
                lo = hi;
                hi = hi * F::lit(2.0);
                if hi > limit {
                    return Ok(Radius { estimate: F::infinity(), half_width: F::zero(), lower: lo, entire: true });
                }
                if !self.converges(c, hi) {
                    break;
                }
            }
        }
        let width = F::lit(1e-9);
        while hi - lo > width * hi {
            let mid = (lo + hi) / F::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.converges(c, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let two = F::lit(2.0);
        Ok(Radius { estimate: (lo + hi) / two, half_width: (hi - lo) / two, lower: lo, entire: false })
    }

    /// Solves `N(x) = n` by bisection.
    pub fn tune(&self, class: &str, n: u64) -> Result<TuneResult<F>, OracleError> {
        let min = self.min_size(class)?;
        if n < min {
            return Err(OracleError::NoSolution { class: class.to_string(), n, min: min.to_string() });
        }
        let radius = self.find_radius(class)?;
        let target = F::lit(n as f64);
        let size = |x: F| self.expected_size(class, x, Some(&radius));
        // N(0+) is the smallest size
        let (mut lo, mut n_lo) = (F::zero(), F::lit(min as f64));
        let mut hi;
        let mut n_hi;
        if radius.entire {
            hi = F::one();
            loop {
                n_hi = size(hi)?;
                if n_hi >= target {
                    break;
                }
                (lo, n_lo) = (hi, n_hi);
                hi = hi * F::lit(2.0);
                if hi > F::lit(RADIUS_LIMIT) {
                    return Err(OracleError::Parameter(format!("expected size of `{class}` never reaches {n}")));
                }
            }
        } else {
            // halve the gap to the singularity until the size is reached;
            // points close to it are the costly ones, so they come last
            let mut last: Option<(F, F)> = None;
            let mut gap = radius.lower / F::lit(2.0);
            // closer than this the derivative stencil is mostly round-off
            let min_gap = radius.lower * F::lit(MIN_TUNE_GAP);
            loop {
                let at_edge = gap <= min_gap;
                let x = radius.lower - gap.max(min_gap);
                match size(x) {
                    Ok(v) => {
                        if v >= target {
                            last = Some((x, v));
                            break;
                        }
                        if let Some(prev) = last {
                            (lo, n_lo) = prev;
                        }
                        last = Some((x, v));
                    }
                    Err(e) if last.is_none() && at_edge => return Err(e),
                    Err(_) => break,
                }
                if at_edge {
                    break;
                }
                gap = gap / F::lit(2.0);
            }
            let Some((x, v)) = last else {
                return Err(OracleError::Diverged { x: radius.lower.to_f64_lossy(), reason: "no point below the singularity evaluates".into() });
            };
            hi = x;
            n_hi = v;
            if n_hi < target {
                return Ok(TuneResult { target: n, x: radius.lower, achieved: n_hi, radius, singular: true });
            }
        }
        let tol = F::lit(1e-7) * target.max(F::one());
        let mut best = (hi, n_hi);
        // Illinois false position: N is increasing and convex
        let (mut f_lo, mut f_hi) = (n_lo - target, n_hi - target);
        let mut side = 0i8;
        for _ in 0..200 {
            let mut mid = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            if !(mid > lo && mid < hi) {
                mid = (lo + hi) / F::lit(2.0);
                if mid <= lo || mid >= hi {
                    break;
                }
            }
            let v = size(mid)?;
            if (v - target).abs() < (best.1 - target).abs() {
                best = (mid, v);
            }
            if (v - target).abs() <= tol {
                break;
            }
            let f = v - target;
            if f < F::zero() {
                (lo, f_lo) = (mid, f);
                if side == -1 {
                    f_hi = f_hi / F::lit(2.0);
                }
                side = -1;
            } else {
                (hi, f_hi) = (mid, f);
                if side == 1 {
                    f_lo = f_lo / F::lit(2.0);
                }
                side = 1;
            }
        }
        Ok(TuneResult { target: n, x: best.0, achieved: best.1, radius, singular: false })
    }
}

/// Values of every class of `spec` at `x`.
pub fn eval<F: Scalar>(spec: &Spec, x: F, tol: F) -> Result<OracleTable<F>, OracleError> {
    Oracle::new(spec, OracleOptions::with_tol(tol))?.eval(x)
}

pub fn expected_size<F: Scalar>(spec: &Spec, class: &str, x: F) -> Result<F, OracleError> {
    let oracle = Oracle::new(spec, OracleOptions::default())?;
    let radius = oracle.find_radius(class)?;
    oracle.expected_size(class, x, Some(&radius))
}

pub fn find_radius<F: Scalar>(spec: &Spec, class: &str) -> Result<Radius<F>, OracleError> {
    Oracle::new(spec, OracleOptions::default())?.find_radius(class)
}

pub fn tune<F: Scalar>(spec: &Spec, class: &str, n: u64) -> Result<TuneResult<F>, OracleError> {
    Oracle::new(spec, OracleOptions::default())?.tune(class, n)
}
