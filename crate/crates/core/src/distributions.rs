//! Inversion samplers for the laws used by the construction samplers.
//!
//! Every draw consumes one uniform `u` in `[0, 1)` and returns the value
//! `min { k : u < CDF(k) }` together with the set of parameter values that
//! would have produced the same value from the same `u`.

use std::fmt;

use thiserror::Error;

use crate::oracle::OracleTable;
use crate::scalar::Scalar;

/// Largest Poisson mean accepted.
pub const POISSON_CAP: f64 = 1e6;

/// Relative width at which interval bisection stops.
const INTERVAL_WIDTH: f64 = 1e-9;

/// Means above this are summed in log space.
const LOG_SPACE_MEAN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("MaxIndex distribution needs more than {0} inner values")]
    NeedsMoreTerms(usize),
}

/// Interval of parameter values on which a draw is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyInterval<F> {
    pub lo: F,
    pub hi: F,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl<F: Scalar> SafetyInterval<F> {
    /// `[0, inf)`: no constraint on a nonnegative constant.
    pub fn full() -> Self {
        SafetyInterval { lo: F::zero(), hi: F::infinity(), lo_closed: true, hi_closed: false }
    }

    pub fn closed(lo: F, hi: F) -> Self {
        SafetyInterval { lo, hi, lo_closed: true, hi_closed: true }
    }

    pub fn contains(&self, v: F) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (lo, lo_closed) = if other.lo > self.lo || (other.lo == self.lo && !other.lo_closed) {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed)
        };
        let (hi, hi_closed) = if other.hi < self.hi || (other.hi == self.hi && !other.hi_closed) {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed)
        };
        SafetyInterval { lo, hi, lo_closed, hi_closed }
    }

    /// Scales both ends by a positive factor.
    pub fn scaled(&self, f: F) -> Self {
        SafetyInterval { lo: self.lo * f, hi: self.hi * f, ..*self }
    }
}

impl<F: Scalar> fmt::Display for SafetyInterval<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:e}, {:e}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawResult<F, V> {
    pub value: V,
    pub interval: SafetyInterval<F>,
    pub uniforms_consumed: u32,
}

fn draw<F, V>(value: V, interval: SafetyInterval<F>) -> DrawResult<F, V> {
    DrawResult { value, interval, uniforms_consumed: 1 }
}

fn check_uniform<F: Scalar>(u: F) -> Result<(), DistError> {
    if u >= F::zero() && u < F::one() {
        Ok(())
    } else {
        Err(DistError::Parameter(format!("uniform must lie in [0, 1), got {u}")))
    }
}

/// `true` iff `u < p`.
pub fn bernoulli<F: Scalar>(u: F, p: F) -> Result<DrawResult<F, bool>, DistError> {
    check_uniform(u)?;
    if !(p >= F::zero() && p <= F::one()) {
        return Err(DistError::Parameter(format!("Bernoulli probability must lie in [0, 1], got {p}")));
    }
    Ok(if u < p {
        draw(true, SafetyInterval { lo: u, hi: F::one(), lo_closed: false, hi_closed: true })
    } else {
        draw(false, SafetyInterval::closed(F::zero(), u))
    })
}

/// `P(K >= k) = p^k`.
pub fn geometric<F: Scalar>(u: F, p: F) -> Result<DrawResult<F, u64>, DistError> {
    check_uniform(u)?;
    if !(p >= F::zero() && p < F::one()) {
        return Err(DistError::Parameter(format!("geometric parameter must lie in [0, 1), got {p}")));
    }
    let v = F::one() - u;
    let k = geometric_value(v, p);
    let hi = v.powf(F::one() / F::lit((k + 1) as f64));
    let interval = if k == 0 {
        SafetyInterval { lo: F::zero(), hi, lo_closed: true, hi_closed: false }
    } else {
        SafetyInterval { lo: v.powf(F::one() / F::lit(k as f64)), hi, lo_closed: true, hi_closed: false }
    };
    Ok(draw(k, interval))
}

/// `min { k : p^(k+1) < v }`.
fn geometric_value<F: Scalar>(v: F, p: F) -> u64 {
    if p == F::zero() {
        return 0;
    }
    let r = v.ln() / p.ln();
    let mut k = r.floor().to_u64().unwrap_or(u64::MAX / 2);
    let pow = |n: u64| p.powf(F::lit(n as f64));
    while pow(k + 1) >= v {
        k += 1;
    }
    while k > 0 && pow(k) < v {
        k -= 1;
    }
    k
}

/// Sequential inversion of a discrete law given by its mass function,
/// starting at `first`. Stops with the last index once the masses vanish.
fn invert<F: Scalar>(u: F, first: u64, mut mass: impl FnMut(u64) -> F) -> u64 {
    let mut cdf = F::zero();
    let mut k = first;
    let mut vanished = 0;
    loop {
        let m = mass(k);
        let next = cdf + m;
        if u < next {
            return k;
        }
        // masses below the resolution of the running sum end the search
        if m > F::zero() && next == cdf {
            return k;
        }
        cdf = next;
        if m == F::zero() && cdf > F::zero() {
            vanished += 1;
            if vanished > 64 {
                return k;
            }
        }
        k += 1;
    }
}

fn poisson_value<F: Scalar>(u: F, lambda: F, min: u64) -> u64 {
    if lambda == F::zero() {
        return min;
    }
    let ln_l = lambda.ln();
    let log_space = lambda > F::lit(LOG_SPACE_MEAN);
    // log of P(X = k), updated incrementally
    let mut ln_term = -lambda;
    let mut term = (-lambda).exp();
    for k in 1..=min {
        ln_term = ln_term + ln_l - F::lit(k as f64).ln();
        term = term * lambda / F::lit(k as f64);
    }
    let norm = if min == 0 {
        F::one()
    } else if min == 1 {
        -(-lambda).exp_m1()
    } else {
        let mut below = F::zero();
        let mut t = (-lambda).exp();
        let mut lt = -lambda;
        for k in 0..min {
            below = below + if log_space { lt.exp() } else { t };
            t = t * lambda / F::lit((k + 1) as f64);
            lt = lt + ln_l - F::lit((k + 1) as f64).ln();
        }
        F::one() - below
    };
    let mut first = true;
    invert(u, min, |k| {
        if !first {
            ln_term = ln_term + ln_l - F::lit(k as f64).ln();
            term = term * lambda / F::lit(k as f64);
        }
        first = false;
        if log_space {
            (ln_term - norm.ln()).exp()
        } else {
            term / norm
        }
    })
}

/// Finds the boundaries of the set of parameters at which `value_at`
/// keeps returning `k`, assuming it is nondecreasing in the parameter.
/// Both returned ends are parameters known to give `k`.
fn monotone_interval<F: Scalar>(
    p: F,
    k: u64,
    floor: F,
    ceil: F,
    grow: impl Fn(F) -> F,
    value_at: impl Fn(F) -> u64,
) -> SafetyInterval<F> {
    let width = F::lit(INTERVAL_WIDTH);
    let two = F::lit(2.0);
    // lower end: bracket [a, b] with value(a) != k, value(b) == k
    let lo = if value_at(floor) == k {
        floor
    } else {
        let (mut a, mut b) = (floor, p);
        while b - a > width * b {
            let m = (a + b) / two;
            if m <= a || m >= b {
                break;
            }
            if value_at(m) == k {
                b = m;
            } else {
                a = m;
            }
        }
        b
    };
    let mut b = p;
    let mut a;
    loop {
        a = b;
        b = grow(b);
        if b >= ceil {
            b = ceil;
            break;
        }
        if value_at(b) != k {
            break;
        }
    }
    let hi = if b >= ceil && value_at(b) == k {
        b
    } else {
        while b - a > width * b {
            let m = (a + b) / two;
            if m <= a || m >= b {
                break;
            }
            if value_at(m) == k {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    SafetyInterval::closed(lo, hi)
}

pub fn poisson<F: Scalar>(u: F, lambda: F) -> Result<DrawResult<F, u64>, DistError> {
    poisson_truncated(u, lambda, 0)
}

/// Poisson conditioned on `K >= min`, inverted against the renormalised CDF.
pub fn poisson_truncated<F: Scalar>(u: F, lambda: F, min: u64) -> Result<DrawResult<F, u64>, DistError> {
    check_uniform(u)?;
    if !(lambda >= F::zero() && lambda <= F::lit(POISSON_CAP)) {
        return Err(DistError::Parameter(format!("Poisson mean must lie in [0, {POISSON_CAP}], got {lambda}")));
    }
    if min > 0 && lambda == F::zero() {
        return Err(DistError::Parameter("truncated Poisson needs a positive mean".into()));
    }
    let k = poisson_value(u, lambda, min);
    let floor = if min > 0 { F::min_positive_value() } else { F::zero() };
    let grow = |l: F| if l == F::zero() { F::one() } else { l * F::lit(2.0) };
    let interval = monotone_interval(lambda, k, floor, F::lit(POISSON_CAP), grow, |l| poisson_value(u, l, min));
    Ok(draw(k, interval))
}

/// Value of a truncated Poisson draw without its interval.
pub fn poisson_plain<F: Scalar>(u: F, lambda: F, min: u64) -> Result<u64, DistError> {
    check_uniform(u)?;
    if !(lambda >= F::zero() && lambda <= F::lit(POISSON_CAP)) {
        return Err(DistError::Parameter(format!("Poisson mean must lie in [0, {POISSON_CAP}], got {lambda}")));
    }
    if min > 0 && lambda == F::zero() {
        return Err(DistError::Parameter("truncated Poisson needs a positive mean".into()));
    }
    Ok(poisson_value(u, lambda, min))
}

/// Value of a logarithmic draw without its interval.
pub fn loga_plain<F: Scalar>(u: F, p: F) -> Result<u64, DistError> {
    check_uniform(u)?;
    if !(p > F::zero() && p < F::one()) {
        return Err(DistError::Parameter(format!("logarithmic parameter must lie in (0, 1), got {p}")));
    }
    Ok(loga_value(u, p))
}

fn loga_value<F: Scalar>(u: F, p: F) -> u64 {
    let norm = -(-p).ln_1p();
    let mut term = p / norm;
    let mut first = true;
    invert(u, 1, |k| {
        if !first {
            term = term * p * F::lit((k - 1) as f64) / F::lit(k as f64);
        }
        first = false;
        term
    })
}

/// Logarithmic law `P(K = k) = p^k / (k |ln(1 - p)|)`, `k >= 1`.
pub fn loga<F: Scalar>(u: F, p: F) -> Result<DrawResult<F, u64>, DistError> {
    check_uniform(u)?;
    if !(p > F::zero() && p < F::one()) {
        return Err(DistError::Parameter(format!("logarithmic parameter must lie in (0, 1), got {p}")));
    }
    let k = loga_value(u, p);
    let below_one = F::one() - F::epsilon();
    // approach 1 geometrically in 1 - p: the law degenerates there
    let grow = |q: F| F::one() - (F::one() - q) / F::lit(2.0);
    let interval = monotone_interval(p, k, F::min_positive_value(), below_one, grow, |q| loga_value(u, q));
    Ok(draw(k, interval))
}

/// A MaxIndex draw with per-coordinate safety intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxIndexDraw<F> {
    pub value: u64,
    /// Interval for each inner value `A(x^j)`, the others held fixed.
    pub inner_intervals: Vec<SafetyInterval<F>>,
    /// Interval for `C(x)`.
    pub total_interval: SafetyInterval<F>,
    pub uniforms_consumed: u32,
}

/// `P(K <= k) = (1/C) prod_{j <= k} exp(A(x^j) / j)` where `inner[j - 1]`
/// is `A(x^j)` and `cx` is `C(x)`. `K = 0` (probability `1/C`) is the
/// empty multiset.
pub fn max_index<F: Scalar>(u: F, inner: &[F], cx: F) -> Result<MaxIndexDraw<F>, DistError> {
    if !(cx > F::zero()) {
        return Err(DistError::Parameter(format!("MaxIndex normaliser must be positive, got {cx}")));
    }
    max_index_log(u, inner, cx.ln())
}

pub(crate) fn max_index_log<F: Scalar>(u: F, inner: &[F], ln_c: F) -> Result<MaxIndexDraw<F>, DistError> {
    check_uniform(u)?;
    let ln_u = u.ln();
    let mut partial = Vec::with_capacity(inner.len() + 1);
    partial.push(F::zero());
    let mut s = F::zero();
    // K = 0 (the empty product) has probability 1/C
    let mut value = (ln_u < -ln_c).then_some(0);
    for (j, &a) in inner.iter().enumerate() {
        if value.is_some() {
            break;
        }
        s = s + a / F::lit((j + 1) as f64);
        partial.push(s);
        if ln_u < s - ln_c {
            value = Some(j + 1);
            break;
        }
    }
    let k = value.ok_or(DistError::NeedsMoreTerms(inner.len()))?;
    if k == 0 {
        let total_interval = SafetyInterval { lo: F::zero(), hi: (-ln_u).exp(), lo_closed: true, hi_closed: false };
        let inner_intervals = vec![SafetyInterval::full(); inner.len()];
        return Ok(MaxIndexDraw { value: 0, inner_intervals, total_interval, uniforms_consumed: 1 });
    }
    let (s_k, s_prev) = (partial[k], partial[k - 1]);
    // K = k iff s_{k-1} - ln C <= ln u < s_k - ln C. The intervals form a
    // box: each margin is split evenly between the coordinates it involves
    // (a_1..a_{k-1} and C above, a_1..a_k and C below), so moving every
    // constant at once inside its interval keeps K.
    let up = (ln_u + ln_c - s_prev) / F::lit(k as f64);
    let down = (s_k - ln_c - ln_u) / F::lit((k + 1) as f64);
    let inner_intervals = inner
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let j = F::lit((i + 1) as f64);
            if i + 1 > k {
                return SafetyInterval::full();
            }
            let lo = a - j * down;
            let hi = if i + 1 < k { a + j * up } else { F::infinity() };
            let (lo, lo_closed) = if lo < F::zero() { (F::zero(), true) } else { (lo, false) };
            SafetyInterval { lo, hi, lo_closed, hi_closed: hi.is_finite() }
        })
        .collect();
    let c = ln_c.exp();
    let total_interval = SafetyInterval { lo: c * (-up).exp(), hi: c * down.exp(), lo_closed: true, hi_closed: false };
    Ok(MaxIndexDraw { value: k as u64, inner_intervals, total_interval, uniforms_consumed: 1 })
}

/// Solves `A(t) = A(0) + u (A(x0) - A(0))` for `t` by bisection, where
/// `value_at` evaluates the (nondecreasing) function `A`.
pub(crate) fn invert_h_density<F: Scalar>(u: F, x0: F, value_at: impl Fn(F) -> F) -> Result<F, DistError> {
    check_uniform(u)?;
    let (a0, a1) = (value_at(F::zero()), value_at(x0));
    if !(a1 > a0) {
        return Err(DistError::Parameter(format!("h-density needs A(x0) > A(0), got {a1} and {a0}")));
    }
    let target = a0 + u * (a1 - a0);
    let tol = F::lit(1e-12).max(F::epsilon() * F::lit(4.0)) * x0;
    let (mut lo, mut hi) = (F::zero(), x0);
    let two = F::lit(2.0);
    while hi - lo > tol {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if value_at(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / two)
}

/// Draws the re-parameterisation point `t` in `(0, x0)` of a differential
/// class from its grid in `table`.
pub fn sample_h_density<F: Scalar>(u: F, class: &str, x0: F, table: &OracleTable<F>) -> Result<F, DistError> {
    let grid = table.ode_grid.as_ref().ok_or_else(|| DistError::Parameter("oracle table has no differential grid".into()))?;
    let c = grid.component(class).ok_or_else(|| DistError::Parameter(format!("`{class}` is not a differential class")))?;
    if !(x0 > F::zero() && x0 <= grid.x) {
        return Err(DistError::Parameter(format!("x0 = {x0} outside the grid [0, {}]", grid.x)));
    }
    invert_h_density(u, x0, |t| grid.value_at(c, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_convention() {
        let d = bernoulli(0.3, 0.5).unwrap();
        assert!(d.value && d.interval.lo == 0.3 && !d.interval.lo_closed);
        assert!(!bernoulli(0.5, 0.5).unwrap().value);
        assert!(bernoulli(0.999, 1.0).unwrap().value);
    }

    #[test]
    fn geometric_examples() {
        let d = geometric(0.2f64, 0.5).unwrap();
        assert_eq!(d.value, 0);
        assert!((d.interval.hi - 0.8).abs() < 1e-15);
        let d = geometric(0.74f64, 0.5).unwrap();
        assert_eq!(d.value, 1);
        assert!((d.interval.lo - 0.26).abs() < 1e-12 && (d.interval.hi - 0.26f64.sqrt()).abs() < 1e-12);
        assert!(geometric(0.5, 1.0).is_err());
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson(0.3, 1.0).unwrap().value, 0);
        assert_eq!(poisson(0.7, 1.0).unwrap().value, 1);
        assert_eq!(poisson_truncated(0.5, 1.0, 1).unwrap().value, 1);
        assert_eq!(poisson_truncated(0.0, 1.0, 1).unwrap().value, 1);
        let big = poisson(0.5, 1000.0).unwrap().value;
        assert!((990..=1010).contains(&big), "{big}");
    }

    #[test]
    fn loga_examples() {
        assert_eq!(loga(0.5, 0.5).unwrap().value, 1);
        assert_eq!(loga(0.75, 0.5).unwrap().value, 2);
    }

    #[test]
    fn max_index_example() {
        let inner: Vec<f64> = (1..60).map(|j| { let y = 0.5f64.powi(j); y / (1.0 - y) }).collect();
        let c: f64 = (1..200).map(|k| 1.0 / (1.0 - 0.5f64.powi(k))).product();
        assert_eq!(max_index(0.5, &inner, c).unwrap().value, 1);
        assert!(max_index(0.99, &inner, c).unwrap().value >= 2);
        assert!(matches!(max_index(0.99, &inner[..1], c), Err(DistError::NeedsMoreTerms(1))));
    }

    #[test]
    fn h_density_on_tangent() {
        let t = invert_h_density(0.5, 1.0, f64::tan).unwrap();
        assert!((t.tan() - 0.5 * 1f64.tan()).abs() < 1e-10);
        assert!((invert_h_density(0.3f64, 2.0, |t| 1.0 + 3.0 * t).unwrap() - 0.6).abs() < 1e-11);
    }
}
