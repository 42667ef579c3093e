//! Values at the geometrically decreasing points `x^k` needed by MSet.

use std::collections::BTreeMap;

use crate::program::{ClassId, NodeId, Program};
use crate::scalar::Scalar;

use super::newton::Frame;

/// Node and class values at one point `x^k`.
#[derive(Debug, Clone)]
pub(crate) struct LevelValues<F> {
    pub classes: Vec<F>,
    pub nodes: Vec<F>,
    pub iterations: usize,
    pub residuals: Vec<F>,
}

/// Which classes and nodes are needed at levels `k >= 2`.
#[derive(Debug, Clone)]
pub(crate) struct LevelShape {
    pub top_classes: Vec<bool>,
    pub sub_classes: Vec<bool>,
    /// Nodes inside MSet arguments that are not part of a sub class.
    pub sub_extra: Vec<bool>,
    /// MSet nodes needing a tail at level 1 and at levels `k >= 2`.
    pub top_msets: Vec<(NodeId, NodeId)>,
    pub sub_msets: Vec<(NodeId, NodeId)>,
}

impl LevelShape {
    pub fn new(prog: &Program, roots: &[ClassId]) -> Self {
        let top_classes = prog.closure(roots);
        let top_msets: Vec<(NodeId, NodeId)> = prog.mset_nodes().filter(|(m, _)| top_classes[prog.owner[*m]]).collect();
        let mut sub_roots = Vec::new();
        let mut arg_nodes = vec![false; prog.nodes.len()];
        for &(_, arg) in &top_msets {
            sub_roots.extend(prog.refs_in(arg));
            for n in prog.subtree(arg) {
                arg_nodes[n] = true;
            }
        }
        let sub_classes = prog.closure(&sub_roots);
        let sub_extra: Vec<bool> = (0..prog.nodes.len()).map(|n| arg_nodes[n] && !sub_classes[prog.owner[n]]).collect();
        let sub_msets = prog.mset_nodes().filter(|(m, _)| sub_classes[prog.owner[*m]] || sub_extra[*m]).collect();
        LevelShape { top_classes, sub_classes, sub_extra, top_msets, sub_msets }
    }

    pub fn has_mset(&self) -> bool {
        !self.top_msets.is_empty()
    }
}

/// Levels whose squared atom value is below `tol` times this factor get
/// no MSet tail.
const DEEP_LEVEL_FACTOR: f64 = 1e-4;

pub(crate) struct LevelSolver<'a, F> {
    pub prog: &'a Program,
    pub shape: &'a LevelShape,
    pub x: F,
    pub tol: F,
    pub cap: F,
    pub max_iterations: usize,
    pub max_levels: usize,
    /// Differential class values at level 1 (NaN elsewhere).
    pub fixed: Vec<F>,
    pub memo: BTreeMap<u64, LevelValues<F>>,
}

impl<F: Scalar> LevelSolver<'_, F> {
    /// Largest atom value `w x` (the ratio of the geometric tail bound).
    pub fn ratio(&self) -> F {
        self.prog.weights.iter().fold(F::zero(), |m, &w| m.max(F::lit(w) * self.x))
    }

    fn atoms(&self, k: u64) -> Vec<F> {
        self.prog.weights.iter().map(|&w| (F::lit(w) * self.x).powf(F::lit(k as f64))).collect()
    }

    /// Solves level `k` (and every level it depends on).
    pub fn level(&mut self, k: u64) -> Result<(), (String, Vec<F>)> {
        if self.memo.contains_key(&k) {
            return Ok(());
        }
        if self.memo.len() >= self.max_levels {
            return Err((format!("MSet evaluation needs more than {} points", self.max_levels), Vec::new()));
        }
        let msets = if k == 1 { self.shape.top_msets.clone() } else { self.shape.sub_msets.clone() };
        let mut tail = vec![F::zero(); self.prog.nodes.len()];
        let q = self.ratio().powf(F::lit(k as f64));
        let half = self.tol / F::lit(2.0);
        // far down the chain x^k, x^2k, ... the tail is below any
        // tolerance; cutting here ends recursive MSet specs
        let negligible = q * q < self.tol * F::lit(DEEP_LEVEL_FACTOR);
        for (m, arg) in msets {
            if negligible {
                continue;
            }
            let mut sum = F::zero();
            for j in 2u64.. {
                let lvl = k.checked_mul(j).ok_or_else(|| ("MSet level overflow".to_string(), Vec::new()))?;
                self.level(lvl)?;
                let a = self.memo[&lvl].nodes[arg];
                let term = a / F::lit(j as f64);
                sum = sum + term;
                let bound = a * q / (F::one() - q);
                if term < half && bound < half {
                    break;
                }
            }
            tail[m] = sum;
        }
        let no_nodes = vec![false; self.prog.nodes.len()];
        let (classes, extra) =
            if k == 1 { (&self.shape.top_classes, &no_nodes) } else { (&self.shape.sub_classes, &self.shape.sub_extra) };
        let atoms = self.atoms(k);
        let fixed = if k == 1 { self.fixed.clone() } else { vec![F::nan(); self.prog.class_count()] };
        let frame = Frame {
            prog: self.prog,
            classes,
            extra_nodes: extra,
            atoms: &atoms,
            fixed: &fixed,
            mset_tail: &tail,
            cap: self.cap,
        };
        let sol = frame.solve(self.tol, self.max_iterations)?;
        self.memo.insert(k, LevelValues { classes: sol.classes, nodes: sol.nodes, iterations: sol.iterations, residuals: sol.residuals });
        Ok(())
    }

    /// Values of `node` at levels `k, 2k, 3k, ...` until the geometric
    /// tail drops below `eps`; entry `j - 1` holds the value at level `jk`.
    pub fn series(&mut self, k: u64, node: NodeId, eps: F) -> Result<Vec<F>, (String, Vec<F>)> {
        let q = self.ratio().powf(F::lit(k as f64));
        let mut out = Vec::new();
        for j in 1u64.. {
            let lvl = k.checked_mul(j).ok_or_else(|| ("MSet level overflow".to_string(), Vec::new()))?;
            self.level(lvl)?;
            let a = self.memo[&lvl].nodes[node];
            out.push(a);
            if a == F::zero() || a * q / (F::one() - q) < eps {
                break;
            }
        }
        Ok(out)
    }
}
