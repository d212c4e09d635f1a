//! Dense Cholesky factorization and triangular solves for kernel matrices.
//!
//! Hand-rolled rather than delegated to a LAPACK binding so the jitter
//! escalation, failure detection, and determinism stay under our control.
//! Inner loops run on contiguous slices; the only O(n³) matrix product goes
//! through ndarray's multiply kernel.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Dot product with four independent accumulators; sequential float sums
/// serialize on add latency, which dominates the factorization loops.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular factor L with A = L Lᵀ.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Array2<f64>,
}

impl CholeskyFactor {
    /// Plain factorization; `None` when a pivot is non-positive or non-finite.
    pub fn decompose(a: &Array2<f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
        let src = a.as_slice().expect("standard layout");
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let sum = src[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    if !(sum.is_finite() && sum > 0.0) {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(CholeskyFactor {
            l: Array2::from_shape_vec((n, n), l).expect("square shape"),
        })
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    /// Solves L z = b.
    pub fn solve_lower_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.n();
        let l = self.l.as_slice().expect("standard layout");
        let mut z = b.to_vec();
        for i in 0..n {
            z[i] = (z[i] - dot(&l[i * n..i * n + i], &z[..i])) / l[i * n + i];
        }
        Array1::from_vec(z)
    }

    /// Solves Lᵀ x = b.
    pub fn solve_upper_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.n();
        let l = self.l.as_slice().expect("standard layout");
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in i + 1..n {
                sum -= l[k * n + i] * x[k];
            }
            x[i] = sum / l[i * n + i];
        }
        Array1::from_vec(x)
    }

    /// Solves (L Lᵀ) x = b.
    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }

    /// Treats every row of `b` as an independent right-hand side and returns
    /// the row-stacked solutions of L z = bᵢ. Row-major access keeps this
    /// cache-friendly for large query batches.
    pub fn solve_lower_rows(&self, b: &Array2<f64>) -> Array2<f64> {
        let n = self.n();
        assert_eq!(b.ncols(), n, "rhs rows must have length n");
        let l = self.l.as_slice().expect("standard layout");
        let mut out = b.clone();
        for mut row in out.rows_mut() {
            let z = row.as_slice_mut().expect("standard layout");
            for i in 0..n {
                z[i] = (z[i] - dot(&l[i * n..i * n + i], &z[..i])) / l[i * n + i];
            }
        }
        out
    }

    /// Computes (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹ explicitly. Works on U = (L⁻¹)ᵀ stored
    /// row-major so both the substitution and the product run on contiguous
    /// slices.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.n();
        let l = self.l.as_slice().expect("standard layout");
        // Row c of U is column c of L⁻¹: U[c][c] = 1/L_cc and
        // U[c][i] = −(Σ_{k=c}^{i−1} L_ik U[c][k]) / L_ii for i > c.
        let mut u = vec![0.0f64; n * n];
        for c in 0..n {
            u[c * n + c] = 1.0 / l[c * n + c];
            for i in c + 1..n {
                let s = dot(&l[i * n + c..i * n + i], &u[c * n + c..c * n + i]);
                u[c * n + i] = -s / l[i * n + i];
            }
        }
        // (L⁻ᵀL⁻¹)_ij = Σ_{k ≥ max(i,j)} U[i][k] U[j][k].
        let mut inv = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let s = dot(&u[i * n + j..(i + 1) * n], &u[j * n + j..(j + 1) * n]);
                inv[i * n + j] = s;
                inv[j * n + i] = s;
            }
        }
        Array2::from_shape_vec((n, n), inv).expect("square shape")
    }

    /// log det(L Lᵀ) = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.n()).map(|i| self.l[[i, i]].ln()).sum::<f64>() * 2.0
    }
}

/// Factorization guard for kernel matrices: adds `initial` jitter to the
/// diagonal before factorizing and escalates by factors of 10 up to `max`
/// before giving up. `initial = 0` disables jitter entirely.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JitterSchedule {
    pub initial: f64,
    pub max: f64,
}

impl Default for JitterSchedule {
    fn default() -> Self {
        JitterSchedule {
            initial: 1e-8,
            max: 1e-4,
        }
    }
}

impl JitterSchedule {
    pub fn none() -> Self {
        JitterSchedule {
            initial: 0.0,
            max: 0.0,
        }
    }
}

/// Factorizes `a + jitter I`, escalating jitter per the schedule. Returns the
/// factor and the jitter that succeeded.
pub fn decompose_with_jitter(
    a: &Array2<f64>,
    schedule: &JitterSchedule,
) -> Result<(CholeskyFactor, f64)> {
    let mut jitter = schedule.initial;
    loop {
        let m = if jitter > 0.0 {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[[i, i]] += jitter;
            }
            m
        } else {
            a.clone()
        };
        if let Some(factor) = CholeskyFactor::decompose(&m) {
            return Ok((factor, jitter));
        }
        if jitter == 0.0 || jitter >= schedule.max {
            return Err(Error::IllConditionedKernel);
        }
        jitter = (jitter * 10.0).min(schedule.max);
    }
}
