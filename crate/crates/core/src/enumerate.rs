//! Exact coefficient counting and exact size distributions.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::oracle::{Oracle, OracleError, OracleOptions};
use crate::program::{Kind, Op, Program};
use crate::spec::{Mode, Spec, SpecError};
use crate::validate::validate_spec;

/// Largest size `count_upto` accepts unless the caller raises it.
pub const DEFAULT_COUNT_CAP: usize = 512;

#[derive(Debug, Error)]
pub enum EnumError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("specification is not well-founded: {0}")]
    Invalid(String),
    #[error("requested size {requested} exceeds the cap {cap}")]
    TooLarge { requested: usize, cap: usize },
    #[error("counting recursion for class `{class}` does not stabilise at size {size}")]
    Divergent { class: String, size: usize },
    #[error("size distributions are only defined for unit atom weights")]
    Weighted,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("parameter {x} is outside the convergence domain of `{class}`")]
    OutOfRange { class: String, x: f64 },
}

/// Exact counts `c_0..=c_N` per class. In labelled mode these are numbers
/// of labelled structures, i.e. `n!` times the EGF coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    pub mode: Mode,
    pub names: Vec<String>,
    pub counts: Vec<Vec<BigUint>>,
}

impl CountTable {
    pub fn class(&self, name: &str) -> Option<&[BigUint]> {
        self.names.iter().position(|n| n == name).map(|i| self.counts[i].as_slice())
    }

    pub fn upto(&self) -> usize {
        self.counts.first().map_or(0, |c| c.len().saturating_sub(1))
    }
}

pub fn count_upto(spec: &Spec, n: usize) -> Result<CountTable, EnumError> {
    count_upto_capped(spec, n, DEFAULT_COUNT_CAP)
}

pub fn count_upto_capped(spec: &Spec, n: usize, cap: usize) -> Result<CountTable, EnumError> {
    if n > cap {
        return Err(EnumError::TooLarge { requested: n, cap });
    }
    let report = validate_spec(spec);
    if !report.ok {
        let msg = report.diagnostics.iter().map(|d| format!("{}: {}", d.class, d.reason)).collect::<Vec<_>>().join("; ");
        return Err(EnumError::Invalid(msg));
    }
    let prog = Program::new(spec)?;
    let counts = Counter::new(&prog, n).run()?;
    Ok(CountTable { mode: spec.mode, names: prog.names.clone(), counts })
}

struct Counter<'p> {
    prog: &'p Program,
    upto: usize,
    labelled: bool,
    binom: Vec<Vec<BigUint>>,
    nodes: Vec<Vec<BigUint>>,
    /// Labelled Seq of the argument, kept for each Cycle node.
    cycle_seq: Vec<Vec<BigUint>>,
    /// `sum_{d | k} d a_d` for each MSet node.
    divisor_sums: Vec<Vec<BigUint>>,
    classes: Vec<Vec<BigUint>>,
}

impl<'p> Counter<'p> {
    fn new(prog: &'p Program, upto: usize) -> Self {
        let labelled = prog.mode == Mode::Labelled;
        let mut binom: Vec<Vec<BigUint>> = Vec::new();
        if labelled {
            for i in 0..=upto {
                let mut row = vec![BigUint::one(); i + 1];
                for j in 1..i {
                    row[j] = &binom[i - 1][j - 1] + &binom[i - 1][j];
                }
                binom.push(row);
            }
        }
        let nn = prog.nodes.len();
        Counter {
            prog,
            upto,
            labelled,
            binom,
            nodes: vec![Vec::with_capacity(upto + 1); nn],
            cycle_seq: vec![Vec::new(); nn],
            divisor_sums: vec![Vec::new(); nn],
            classes: vec![Vec::with_capacity(upto + 1); prog.class_count()],
        }
    }

    fn run(mut self) -> Result<Vec<Vec<BigUint>>, EnumError> {
        let rounds = self.prog.class_count() + 2;
        for n in 0..=self.upto {
            for c in 0..self.prog.class_count() {
                let v = match self.prog.kinds[c] {
                    Kind::Differential { initial_count } if n == 0 => BigUint::from(initial_count),
                    Kind::Differential { .. } => self.nodes[self.prog.roots[c]][n - 1].clone(),
                    Kind::Plain => BigUint::zero(),
                };
                self.classes[c].push(v);
            }
            for v in &mut self.nodes {
                v.push(BigUint::zero());
            }
            for (i, op) in self.prog.nodes.iter().enumerate() {
                if matches!(op, Op::Cycle(_)) {
                    self.cycle_seq[i].push(BigUint::zero());
                }
            }
            let mut stable = false;
            for _ in 0..rounds {
                self.eval_size(n);
                let mut changed = false;
                for c in 0..self.prog.class_count() {
                    if self.prog.kinds[c] == Kind::Plain {
                        let v = self.nodes[self.prog.roots[c]][n].clone();
                        if v != self.classes[c][n] {
                            self.classes[c][n] = v;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    stable = true;
                    break;
                }
            }
            if !stable {
                let class = (0..self.prog.class_count())
                    .find(|&c| self.prog.kinds[c] == Kind::Plain && self.nodes[self.prog.roots[c]][n] != self.classes[c][n])
                    .map(|c| self.prog.names[c].clone())
                    .unwrap_or_default();
                return Err(EnumError::Divergent { class, size: n });
            }
            // MSet divisor sums need the final a_n of the argument.
            for (m, arg) in self.prog.mset_nodes().collect::<Vec<_>>() {
                let _ = arg;
                self.push_divisor_sum(m, n);
            }
        }
        Ok(self.classes)
    }

    fn push_divisor_sum(&mut self, m: usize, n: usize) {
        let Op::MSet(arg) = self.prog.nodes[m] else { unreachable!() };
        let mut s = BigUint::zero();
        if n > 0 {
            for d in 1..=n {
                if n % d == 0 {
                    s += &self.nodes[arg][d] * BigUint::from(d);
                }
            }
        }
        self.divisor_sums[m].push(s);
    }

    fn b(&self, n: usize, k: usize) -> BigUint {
        if self.labelled {
            self.binom[n][k].clone()
        } else {
            BigUint::one()
        }
    }

    /// Recomputes every node's size-`n` entry from the current class values.
    fn eval_size(&mut self, n: usize) {
        for i in 0..self.prog.nodes.len() {
            let v = match self.prog.nodes[i] {
                Op::Empty => BigUint::from((n == 0) as u8),
                Op::Atom(_) => BigUint::from((n == 1) as u8),
                Op::Ref(c) => self.classes[c][n].clone(),
                Op::Union(a, b) => &self.nodes[a][n] + &self.nodes[b][n],
                Op::Product(a, b) => {
                    let mut s = BigUint::zero();
                    for k in 0..=n {
                        let (x, y) = (&self.nodes[a][k], &self.nodes[b][n - k]);
                        if !x.is_zero() && !y.is_zero() {
                            s += self.b(n, k) * x * y;
                        }
                    }
                    s
                }
                Op::Seq(a) => self.seq_entry(&self.nodes[a], &self.nodes[i], n),
                Op::Cycle(a) => {
                    let s = self.seq_entry(&self.nodes[a], &self.cycle_seq[i], n);
                    self.cycle_seq[i][n] = s;
                    let mut c = BigUint::zero();
                    for k in 1..=n {
                        let x = &self.nodes[a][k];
                        if !x.is_zero() {
                            c += &self.binom[n - 1][k - 1] * x * &self.cycle_seq[i][n - k];
                        }
                    }
                    c
                }
                Op::Set(a) => {
                    if n == 0 {
                        BigUint::one()
                    } else {
                        let mut c = BigUint::zero();
                        for k in 1..=n {
                            let x = &self.nodes[a][k];
                            if !x.is_zero() {
                                c += &self.binom[n - 1][k - 1] * x * &self.nodes[i][n - k];
                            }
                        }
                        c
                    }
                }
                Op::MSet(a) => {
                    if n == 0 {
                        BigUint::one()
                    } else {
                        let mut acc = BigUint::zero();
                        for k in 1..n {
                            acc += &self.divisor_sums[i][k] * &self.nodes[i][n - k];
                        }
                        // the k = n divisor sum is not final yet: a_n is in flux
                        let mut top = BigUint::zero();
                        for d in 1..=n {
                            if n % d == 0 {
                                top += &self.nodes[a][d] * BigUint::from(d);
                            }
                        }
                        acc += top * &self.nodes[i][0];
                        acc / BigUint::from(n)
                    }
                }
            };
            self.nodes[i][n] = v;
        }
    }

    /// `c_n = [n = 0] + sum_{j >= 1} w(n, j) a_j c_{n-j}`.
    fn seq_entry(&self, a: &[BigUint], c: &[BigUint], n: usize) -> BigUint {
        if n == 0 {
            return BigUint::one();
        }
        let mut s = BigUint::zero();
        for j in 1..=n {
            if !a[j].is_zero() && !c[n - j].is_zero() {
                s += self.b(n, j) * &a[j] * &c[n - j];
            }
        }
        s
    }
}

/// Natural logarithm of a big integer (`-inf` for zero).
pub(crate) fn big_ln(v: &BigUint) -> f64 {
    let bits = v.bits();
    if bits <= 1000 {
        return v.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 1000;
    (v >> shift).to_f64().unwrap_or(f64::INFINITY).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact-count size distribution `p_0..=p_N` of the Boltzmann model at `x`.
pub fn size_pmf(spec: &Spec, class: &str, x: f64, n: usize) -> Result<Vec<f64>, EnumError> {
    if !spec.has_unit_weights() {
        return Err(EnumError::Weighted);
    }
    let table = count_upto_capped(spec, n, n.max(DEFAULT_COUNT_CAP))?;
    let counts = table.class(class).ok_or_else(|| SpecError::UnknownClass(class.to_string()))?;
    let oracle = Oracle::<f64>::new(spec, OracleOptions::default())?;
    let value = oracle.eval_classes(&[class], x)?;
    let cx = value.value(class).filter(|_| value.converged()).ok_or(EnumError::OutOfRange { class: class.into(), x })?;
    let (ln_x, ln_c) = (x.ln(), cx.ln());
    let mut ln_fact = 0.0;
    let mut out = Vec::with_capacity(n + 1);
    for (k, c) in counts.iter().enumerate() {
        if k > 0 && spec.mode == Mode::Labelled {
            ln_fact += (k as f64).ln();
        }
        out.push(if c.is_zero() { 0.0 } else { (big_ln(c) + k as f64 * ln_x - ln_fact - ln_c).exp() });
    }
    Ok(out)
}
