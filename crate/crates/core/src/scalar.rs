//! Floating point abstraction shared by the oracle, the distributions and
//! the samplers.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for generating-function values and random decisions.
///
/// Implemented for `f32` and `f64`. Everything numeric in the crate is
/// written against this trait; the `f64` aliases in the crate root are what
/// the CLI and most callers use.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Number of significand bits, including the implicit one.
    const MANTISSA_DIGITS: u32;

    /// Tolerance used by the oracle when the caller does not pick one.
    fn default_tolerance() -> Self;

    /// Converts an `f64` literal. Values out of range saturate to infinity.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(|| if v > 0.0 { Self::infinity() } else { Self::neg_infinity() })
    }

    /// Maps 64 random bits to a uniform value in `[0, 1)` using the top
    /// `MANTISSA_DIGITS` bits, so the result is exactly representable.
    #[inline]
    fn uniform_from_bits(bits: u64) -> Self {
        let p = Self::MANTISSA_DIGITS;
        let top = bits >> (64 - p);
        Self::lit(top as f64) * Self::lit(2f64.powi(-(p as i32)))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Scalar for f64 {
    const MANTISSA_DIGITS: u32 = f64::MANTISSA_DIGITS;

    fn default_tolerance() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    const MANTISSA_DIGITS: u32 = f32::MANTISSA_DIGITS;

    fn default_tolerance() -> Self {
        1e-5
    }
}

/// Relative distance `|a - b| / max(1, |a|, |b|)`.
pub(crate) fn rel_diff<F: Scalar>(a: F, b: F) -> F {
    let scale = F::one().max(a.abs()).max(b.abs());
    (a - b).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bits_stay_below_one() {
        assert!(f64::uniform_from_bits(u64::MAX) < 1.0);
        assert!(f32::uniform_from_bits(u64::MAX) < 1.0);
        assert_eq!(f64::uniform_from_bits(0), 0.0);
        assert_eq!(f64::uniform_from_bits(1 << 63), 0.5);
    }
}
