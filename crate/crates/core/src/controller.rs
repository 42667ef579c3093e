//! Size control by rejection: approximate and exact size windows, singular
//! sampling with a ceiling, and Hadamard products of two samplers.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::sampler::{CompiledSampler, Ledger, Sample, SampleError, SampleOutcome, SizeReport};
use crate::scalar::Scalar;
use crate::stream::SessionStream;
use crate::structure::Structure;

pub const DEFAULT_TRIAL_CAP: u64 = 1_000_000;
/// Most atoms the birthday sampler may retain.
pub const DEFAULT_MEMORY_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Approx,
    Exact,
    SingularApprox,
    SingularExact,
    HadamardNaive,
    HadamardBirthday,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            ControlMode::Approx => "approx",
            ControlMode::Exact => "exact",
            ControlMode::SingularApprox => "singular-approx",
            ControlMode::SingularExact => "singular-exact",
            ControlMode::HadamardNaive => "hadamard-naive",
            ControlMode::HadamardBirthday => "hadamard-birthday",
        }
    }
}

/// How the birthday sampler picks the side of the next draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternation {
    #[default]
    Deterministic,
    Random,
}

#[derive(Debug, Clone)]
pub struct ControlResult<F> {
    pub structure: Structure,
    /// Right-hand structure of a Hadamard pair.
    pub partner: Option<Structure>,
    /// Free samples drawn (pairs for the naive Hadamard sampler).
    pub trials: u64,
    pub total_atoms_generated: u64,
    pub total_uniforms: u64,
    pub mode: ControlMode,
    pub parameters: Vec<F>,
    /// Report and ledger of the accepted run (left side for pairs).
    pub report: SizeReport,
    pub ledger: Ledger<F>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("no structure accepted after {trials} trials ({atoms} atoms generated); the parameter is probably mistuned")]
    TrialCap { trials: u64, atoms: u64 },
    #[error("retained structures exceed the memory cap of {0} atoms")]
    MemoryCap(u64),
    #[error("no structure of `{class}` has a size in {window}")]
    NoSolution { class: String, window: String },
    #[error("invalid control parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Controller {
    pub trial_cap: u64,
    pub memory_cap: u64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller { trial_cap: DEFAULT_TRIAL_CAP, memory_cap: DEFAULT_MEMORY_CAP }
    }
}

/// Accepted sizes `min..=max`.
#[derive(Debug, Clone, Copy)]
struct Window {
    min: u64,
    max: u64,
}

impl Controller {
    /// Draws until the size lies in `((1 - eps) n, (1 + eps) n)`. In
    /// singular mode the run is aborted once it passes the largest
    /// acceptable size.
    pub fn sample_approx<F: Scalar>(
        &self,
        sampler: &CompiledSampler<F>,
        class: &str,
        n: u64,
        epsilon: f64,
        singular: bool,
        stream: &mut SessionStream,
    ) -> Result<ControlResult<F>, ControlError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ControlError::Parameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        let lo = (1.0 - epsilon) * n as f64;
        let hi = (1.0 + epsilon) * n as f64;
        // integers strictly inside (lo, hi); ends within round-off of an
        // integer count as that integer, so 1.1 * 100 excludes 110
        let snap = |v: f64| if (v - v.round()).abs() <= 1e-9 * v.abs().max(1.0) { v.round() } else { v };
        let min = snap(lo).floor() as u64 + 1;
        let max = (snap(hi).ceil() as u64).saturating_sub(1);
        let mode = if singular { ControlMode::SingularApprox } else { ControlMode::Approx };
        self.control(sampler, class, Window { min, max }, mode, stream, || format!("({lo}, {hi})"))
    }

    /// Draws until the size is exactly `n`.
    pub fn sample_exact<F: Scalar>(
        &self,
        sampler: &CompiledSampler<F>,
        class: &str,
        n: u64,
        singular: bool,
        stream: &mut SessionStream,
    ) -> Result<ControlResult<F>, ControlError> {
        let mode = if singular { ControlMode::SingularExact } else { ControlMode::Exact };
        self.control(sampler, class, Window { min: n, max: n }, mode, stream, || format!("{{{n}}}"))
    }

    fn control<F: Scalar>(
        &self,
        sampler: &CompiledSampler<F>,
        class: &str,
        window: Window,
        mode: ControlMode,
        stream: &mut SessionStream,
        describe: impl Fn() -> String,
    ) -> Result<ControlResult<F>, ControlError> {
        let smallest = sampler.min_size(class)?;
        if window.min > window.max || smallest.is_none_or(|m| m > window.max) {
            return Err(ControlError::NoSolution { class: class.to_string(), window: describe() });
        }
        let sampler = if matches!(mode, ControlMode::SingularApprox | ControlMode::SingularExact) {
            let ceiling = sampler.options().ceiling.map_or(window.max, |c| c.min(window.max));
            sampler.with_ceiling(Some(ceiling.max(1)))
        } else {
            sampler.clone()
        };
        let (mut atoms, mut uniforms) = (0, 0);
        for trial in 1..=self.trial_cap {
            let outcome = sampler.sample(class, stream)?;
            atoms += outcome.report().atoms_generated;
            uniforms += outcome.report().uniforms_consumed;
            if let SampleOutcome::Done(Sample { structure, report, ledger }) = outcome {
                let size = structure.size();
                if size >= window.min && size <= window.max {
                    return Ok(ControlResult {
                        structure,
                        partner: None,
                        trials: trial,
                        total_atoms_generated: atoms,
                        total_uniforms: uniforms,
                        mode,
                        parameters: vec![sampler.x()],
                        report,
                        ledger,
                    });
                }
            }
        }
        Err(ControlError::TrialCap { trials: self.trial_cap, atoms })
    }

    /// Draws independent pairs until both sides have the same size.
    pub fn sample_hadamard_naive<F: Scalar>(
        &self,
        left: (&CompiledSampler<F>, &str),
        right: (&CompiledSampler<F>, &str),
        stream: &mut SessionStream,
    ) -> Result<ControlResult<F>, ControlError> {
        let (mut atoms, mut uniforms) = (0, 0);
        for trial in 1..=self.trial_cap {
            let a = free(left.0, left.1, stream)?;
            let b = free(right.0, right.1, stream)?;
            atoms += a.report.atoms_generated + b.report.atoms_generated;
            uniforms += a.report.uniforms_consumed + b.report.uniforms_consumed;
            if a.structure.size() == b.structure.size() {
                return Ok(ControlResult {
                    structure: a.structure,
                    partner: Some(b.structure),
                    trials: trial,
                    total_atoms_generated: atoms,
                    total_uniforms: uniforms,
                    mode: ControlMode::HadamardNaive,
                    parameters: vec![left.0.x(), right.0.x()],
                    report: a.report,
                    ledger: a.ledger,
                });
            }
        }
        Err(ControlError::TrialCap { trials: self.trial_cap, atoms })
    }

    /// Keeps the first structure of every (side, size) and stops as soon
    /// as one size is held on both sides. `trials` counts single draws.
    pub fn sample_hadamard_birthday<F: Scalar>(
        &self,
        left: (&CompiledSampler<F>, &str),
        right: (&CompiledSampler<F>, &str),
        alternation: Alternation,
        stream: &mut SessionStream,
    ) -> Result<ControlResult<F>, ControlError> {
        let mut kept: [BTreeMap<u64, Sample<F>>; 2] = [BTreeMap::new(), BTreeMap::new()];
        let (mut atoms, mut uniforms, mut retained) = (0, 0, 0u64);
        for trial in 1..=self.trial_cap {
            let side = match alternation {
                Alternation::Deterministic => ((trial - 1) % 2) as usize,
                Alternation::Random => stream.below(2) as usize,
            };
            let (sampler, class) = if side == 0 { left } else { right };
            let s = free(sampler, class, stream)?;
            atoms += s.report.atoms_generated;
            uniforms += s.report.uniforms_consumed;
            let size = s.structure.size();
            if kept[side].contains_key(&size) {
                continue;
            }
            if kept[1 - side].contains_key(&size) {
                let other = kept[1 - side].remove(&size).expect("checked");
                let (a, b) = if side == 0 { (s, other) } else { (other, s) };
                return Ok(ControlResult {
                    structure: a.structure,
                    partner: Some(b.structure),
                    trials: trial,
                    total_atoms_generated: atoms,
                    total_uniforms: uniforms,
                    mode: ControlMode::HadamardBirthday,
                    parameters: vec![left.0.x(), right.0.x()],
                    report: a.report,
                    ledger: a.ledger,
                });
            }
            retained += size.max(1);
            if retained > self.memory_cap {
                return Err(ControlError::MemoryCap(self.memory_cap));
            }
            kept[side].insert(size, s);
        }
        Err(ControlError::TrialCap { trials: self.trial_cap, atoms })
    }
}

fn free<F: Scalar>(sampler: &CompiledSampler<F>, class: &str, stream: &mut SessionStream) -> Result<Sample<F>, ControlError> {
    match sampler.sample(class, stream)? {
        SampleOutcome::Done(s) => Ok(s),
        SampleOutcome::Aborted(_) => Err(ControlError::Parameter("Hadamard samplers must not carry a ceiling".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Oracle, OracleOptions};
    use crate::parser::parse_spec;
    use crate::sampler::SamplerOptions;

    fn compile(src: &str, x: f64) -> CompiledSampler<f64> {
        let spec = parse_spec(src).unwrap();
        let table = Oracle::<f64>::new(&spec, OracleOptions::default()).unwrap().eval(x).unwrap();
        CompiledSampler::compile(&spec, &table, SamplerOptions::default()).unwrap()
    }

    #[test]
    fn exact_and_approx_windows() {
        let s = compile("P = Z * Seq(P);", 0.24);
        let c = Controller::default();
        let mut stream = SessionStream::new(4, 0);
        let r = c.sample_exact(&s, "P", 5, false, &mut stream).unwrap();
        assert_eq!(r.structure.size(), 5);
        assert!(r.trials >= 1);
        let r = c.sample_approx(&s, "P", 10, 0.2, true, &mut stream).unwrap();
        assert!(r.structure.size() > 8 && r.structure.size() < 12);
        assert!(matches!(c.sample_exact(&s, "P", 0, false, &mut stream), Err(ControlError::NoSolution { .. })));
    }

    #[test]
    fn hadamard_pairs_have_equal_sizes() {
        let s = compile("S = Seq(Z);", 0.5);
        let c = Controller::default();
        let mut stream = SessionStream::new(8, 0);
        for alt in [Alternation::Deterministic, Alternation::Random] {
            let r = c.sample_hadamard_birthday((&s, "S"), (&s, "S"), alt, &mut stream).unwrap();
            assert_eq!(r.structure.size(), r.partner.unwrap().size());
            assert!(r.trials >= 2);
        }
        let r = c.sample_hadamard_naive((&s, "S"), (&s, "S"), &mut stream).unwrap();
        assert_eq!(r.structure.size(), r.partner.unwrap().size());
    }

    #[test]
    fn trial_cap_is_reported() {
        let s = compile("P = Z * Seq(P);", 0.01);
        let c = Controller { trial_cap: 10, ..Default::default() };
        let e = c.sample_exact(&s, "P", 40, false, &mut SessionStream::new(1, 0)).unwrap_err();
        assert!(matches!(e, ControlError::TrialCap { trials: 10, .. }));
    }
}
