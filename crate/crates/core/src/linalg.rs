//! Dense LU with partial pivoting; only what the Newton step needs.

use crate::scalar::Scalar;

/// Row-major square matrix factorisation.
pub(crate) struct Lu<F> {
    n: usize,
    a: Vec<F>,
    perm: Vec<usize>,
}

impl<F: Scalar> Lu<F> {
    /// Factors `a` (row-major, `n x n`). Returns `None` when a pivot is
    /// below `tiny` relative to the largest entry of its column.
    pub fn factor(mut a: Vec<F>, n: usize, tiny: F) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(F::zero(), |m, v| m.max(v.abs())).max(F::min_positive_value());
        for k in 0..n {
            let (p, best) = (k..n).map(|i| (i, a[i * n + k].abs())).fold((k, F::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(best > tiny * scale) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != F::zero() {
                    for j in k + 1..n {
                        let v = a[k * n + j];
                        a[i * n + j] = a[i * n + j] - f * v;
                    }
                }
            }
        }
        Some(Lu { n, a, perm })
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.n;
        let mut x: Vec<F> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s = s - self.a[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - self.a[i * n + j] * x[j];
            }
            x[i] = s / self.a[i * n + i];
        }
        x
    }

    /// Whether the inverse is entrywise nonnegative (up to rounding). For
    /// `I - J` with `J >= 0` this holds exactly when the spectral radius of
    /// `J` is below one.
    pub fn inverse_nonnegative(&self) -> bool {
        let n = self.n;
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = F::zero());
            e[j] = F::one();
            let col = self.solve(&e);
            let big = col.iter().fold(F::one(), |m, v| m.max(v.abs()));
            let slack = F::lit(1e-9) * big;
            if col.iter().any(|&v| !(v >= -slack)) {
                return false;
            }
        }
        true
    }
}
