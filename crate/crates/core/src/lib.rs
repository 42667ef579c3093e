//! Boltzmann samplers compiled from combinatorial class specifications.
//!
//! A spec written in the class DSL is parsed and validated, its generating
//! functions are evaluated numerically by the oracle, and the result is
//! compiled into a sampler whose outputs follow the Boltzmann law. The
//! controller adds size targeting by rejection; the enumerator gives exact
//! counts to test everything against.
//!
//! The numeric parts are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar type.

pub mod cli;
pub mod controller;
pub mod distributions;
pub mod enumerate;
mod linalg;
pub mod oracle;
pub mod parser;
mod program;
pub mod sampler;
pub mod scalar;
pub mod spec;
pub mod stream;
pub mod structure;
pub mod validate;

pub use parser::{format_spec, parse_spec};
pub use spec::{Mode, Spec};
pub use validate::validate_spec;

pub type Oracle64 = oracle::Oracle<f64>;
pub type Oracle32 = oracle::Oracle<f32>;
pub type OracleTable64 = oracle::OracleTable<f64>;
pub type OracleTable32 = oracle::OracleTable<f32>;
pub type Radius64 = oracle::Radius<f64>;
pub type TuneResult64 = oracle::TuneResult<f64>;
pub type CompiledSampler64 = sampler::CompiledSampler<f64>;
pub type CompiledSampler32 = sampler::CompiledSampler<f32>;
pub type SafetyInterval64 = distributions::SafetyInterval<f64>;
pub type SafetyInterval32 = distributions::SafetyInterval<f32>;
pub type ControlResult64 = controller::ControlResult<f64>;
pub type ControlResult32 = controller::ControlResult<f32>;
