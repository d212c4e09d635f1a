//! ARD-RBF kernel: k(x, x') = σ · exp(−Σ_j (x_j − x'_j)² / (2 ℓ_j²)).

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel hyperparameters stored in log space so positivity holds by
/// construction. Layout used when packed into a flat vector:
/// `[log ℓ_1, …, log ℓ_d, log σ, log σ_ε²]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparameters {
    pub log_lengthscales: Array1<f64>,
    pub log_output_variance: f64,
    pub log_noise_variance: f64,
}

impl KernelHyperparameters {
    pub fn new(
        log_lengthscales: Array1<f64>,
        log_output_variance: f64,
        log_noise_variance: f64,
    ) -> Result<Self> {
        let hp = KernelHyperparameters {
            log_lengthscales,
            log_output_variance,
            log_noise_variance,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Fitting start point: ℓ_j = 1 (unit-cube inputs), σ = 1, σ_ε² = 0.01
    /// (standardized outputs).
    pub fn init(dim: usize) -> Self {
        KernelHyperparameters {
            log_lengthscales: Array1::zeros(dim),
            log_output_variance: 0.0,
            log_noise_variance: (0.01f64).ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.log_lengthscales.iter().all(|v| v.is_finite())
            && self.log_output_variance.is_finite()
            && self.log_noise_variance.is_finite();
        // exp of a large log overflows to inf; that counts as invalid too.
        let exp_finite = self
            .log_lengthscales
            .iter()
            .chain([&self.log_output_variance, &self.log_noise_variance])
            .all(|v| v.exp().is_finite() && v.exp() > 0.0);
        if all_finite && exp_finite {
            Ok(())
        } else {
            Err(Error::invalid(
                "kernel hyperparameters must be finite with positive finite exponentials",
            ))
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Array1<f64> {
        self.log_lengthscales.mapv(f64::exp)
    }

    pub fn output_variance(&self) -> f64 {
        self.log_output_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub(crate) fn pack(&self) -> Array1<f64> {
        let d = self.dim();
        let mut v = Array1::zeros(d + 2);
        v.slice_mut(ndarray::s![..d]).assign(&self.log_lengthscales);
        v[d] = self.log_output_variance;
        v[d + 1] = self.log_noise_variance;
        v
    }

    pub(crate) fn unpack(v: &Array1<f64>) -> Self {
        let d = v.len() - 2;
        KernelHyperparameters {
            log_lengthscales: v.slice(ndarray::s![..d]).to_owned(),
            log_output_variance: v[d],
            log_noise_variance: v[d + 1],
        }
    }
}

/// Evaluates the ARD-RBF kernel between two points.
pub fn ard_rbf(x: ArrayView1<'_, f64>, x2: ArrayView1<'_, f64>, hp: &KernelHyperparameters) -> Result<f64> {
    if x.len() != hp.dim() || x2.len() != hp.dim() {
        return Err(Error::dim(
            "ard_rbf point dimension",
            hp.dim(),
            if x.len() != hp.dim() { x.len() } else { x2.len() },
        ));
    }
    hp.validate()?;
    let ls = hp.lengthscales();
    let mut exponent = 0.0;
    for j in 0..x.len() {
        let diff = x[j] - x2[j];
        exponent += diff * diff / (2.0 * ls[j] * ls[j]);
    }
    Ok(hp.output_variance() * (-exponent).exp())
}

/// Symmetric kernel matrix over the rows of `x` (no noise on the diagonal).
pub(crate) fn kernel_matrix(x: &Array2<f64>, hp: &KernelHyperparameters) -> Array2<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let xs = x.as_slice().expect("standard layout");
    let inv_l: Vec<f64> = hp.lengthscales().iter().map(|l| 1.0 / l).collect();
    let sigma = hp.output_variance();
    let mut k = vec![0.0f64; n * n];
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        k[i * n + i] = sigma;
        for j in 0..i {
            let xj = &xs[j * d..(j + 1) * d];
            let mut exponent = 0.0;
            for c in 0..d {
                let diff = (xi[c] - xj[c]) * inv_l[c];
                exponent += diff * diff;
            }
            let v = sigma * (-0.5 * exponent).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Array2::from_shape_vec((n, n), k).expect("square shape")
}

/// Cross-kernel matrix between the rows of `a` (n₁) and `b` (n₂).
pub(crate) fn cross_kernel(
    a: &Array2<f64>,
    b: &Array2<f64>,
    hp: &KernelHyperparameters,
) -> Array2<f64> {
    let (n1, n2, d) = (a.nrows(), b.nrows(), a.ncols());
    let asl = a.as_slice().expect("standard layout");
    let bsl = b.as_slice().expect("standard layout");
    let inv_l: Vec<f64> = hp.lengthscales().iter().map(|l| 1.0 / l).collect();
    let sigma = hp.output_variance();
    let mut k = vec![0.0f64; n1 * n2];
    for i in 0..n1 {
        let xi = &asl[i * d..(i + 1) * d];
        let row = &mut k[i * n2..(i + 1) * n2];
        for (j, slot) in row.iter_mut().enumerate() {
            let xj = &bsl[j * d..(j + 1) * d];
            let mut exponent = 0.0;
            for c in 0..d {
                let diff = (xi[c] - xj[c]) * inv_l[c];
                exponent += diff * diff;
            }
            *slot = sigma * (-0.5 * exponent).exp();
        }
    }
    Array2::from_shape_vec((n1, n2), k).expect("rectangular shape")
}

/// Per-dimension squared-difference matrices S_j[i,k] = (x_ij − x_kj)², reused
/// by the lengthscale gradients.
pub(crate) fn sq_dists_per_dim(x: &Array2<f64>) -> Vec<Array2<f64>> {
    let n = x.nrows();
    let d = x.ncols();
    let xs = x.as_slice().expect("standard layout");
    (0..d)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|i| xs[i * d + c]).collect();
            let mut s = vec![0.0f64; n * n];
            for i in 0..n {
                let xi = col[i];
                for j in 0..i {
                    let diff = xi - col[j];
                    let v = diff * diff;
                    s[i * n + j] = v;
                    s[j * n + i] = v;
                }
            }
            Array2::from_shape_vec((n, n), s).expect("square shape")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn hp(ls: Vec<f64>, sigma: f64, noise: f64) -> KernelHyperparameters {
        KernelHyperparameters::new(
            Array1::from(ls).mapv(f64::ln),
            sigma.ln(),
            noise.ln(),
        )
        .unwrap()
    }

    #[test]
    fn zero_distance_returns_output_variance() {
        let h = hp(vec![0.3, 2.0], 1.7, 0.01);
        let x = array![0.4, -1.0];
        assert_abs_diff_eq!(ard_rbf(x.view(), x.view(), &h).unwrap(), 1.7, epsilon = 1e-15);
    }

    #[test]
    fn direct_evaluation_matches_hand_value() {
        let h = hp(vec![1.0, 1.0], 1.0, 0.01);
        let v = ard_rbf(array![0.0, 0.0].view(), array![2.0, 0.0].view(), &h).unwrap();
        assert_abs_diff_eq!(v, (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn kernel_is_symmetric_in_arguments() {
        let h = hp(vec![0.5, 1.5, 3.0], 2.0, 0.1);
        let a = array![0.1, 0.9, -0.4];
        let b = array![1.0, 0.0, 0.2];
        let kab = ard_rbf(a.view(), b.view(), &h).unwrap();
        let kba = ard_rbf(b.view(), a.view(), &h).unwrap();
        assert_abs_diff_eq!(kab, kba, epsilon = 1e-15);
        assert!(kab > 0.0 && kab <= 2.0);
    }

    #[test]
    fn huge_lengthscales_approach_output_variance() {
        let h = hp(vec![1e8, 1e8], 0.7, 0.01);
        let v = ard_rbf(array![0.0, 0.0].view(), array![1.0, 1.0].view(), &h).unwrap();
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let h = hp(vec![1.0, 1.0], 1.0, 0.01);
        assert!(ard_rbf(array![0.0].view(), array![1.0, 0.0].view(), &h).is_err());
    }

    #[test]
    fn matrix_agrees_with_pointwise_kernel_and_is_symmetric() {
        let h = hp(vec![0.4, 1.1], 1.3, 0.01);
        let x = array![[0.0, 0.1], [0.4, 0.9], [0.9, 0.2], [0.3, 0.3]];
        let k = kernel_matrix(&x, &h);
        for i in 0..4 {
            for j in 0..4 {
                let direct = ard_rbf(x.row(i), x.row(j), &h).unwrap();
                assert_abs_diff_eq!(k[[i, j]], direct, epsilon = 1e-14);
                assert_abs_diff_eq!(k[[i, j]], k[[j, i]], epsilon = 1e-15);
            }
        }
        let kc = cross_kernel(&x, &x, &h);
        for (a, b) in k.iter().zip(kc.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let h = hp(vec![0.3, 2.0, 5.0], 1.7, 0.02);
        let packed = h.pack();
        assert_eq!(packed.len(), 5);
        assert_eq!(KernelHyperparameters::unpack(&packed), h);
    }
}
