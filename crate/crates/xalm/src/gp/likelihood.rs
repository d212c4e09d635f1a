//! Gaussian log marginal likelihood and its gradient in log-parameter space.

use ndarray::{Array1, Array2};

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::linalg::{decompose_with_jitter, JitterSchedule};

use super::kernel::{kernel_matrix, sq_dists_per_dim, KernelHyperparameters};

const LN_2PI: f64 = 1.8378770664093453;

/// LML −½ yᵀ(K+σ_ε²I)⁻¹y − ½ log det(K+σ_ε²I) − (N/2)·log 2π together with
/// its analytic gradient with respect to every log-parameter, laid out as
/// `[log ℓ_1 … log ℓ_d, log σ, log σ_ε²]`.
pub fn log_marginal_likelihood(
    data: &LabeledDataset,
    hp: &KernelHyperparameters,
    jitter: &JitterSchedule,
) -> Result<(f64, Array1<f64>)> {
    hp.validate()?;
    FitContext::new(data.inputs().clone(), data.outputs().clone(), *jitter).evaluate(hp)
}

/// Per-fit state reused across optimizer steps: the training arrays and the
/// squared per-dimension distance matrices feeding the lengthscale gradients.
pub(crate) struct FitContext {
    inputs: Array2<f64>,
    outputs: Array1<f64>,
    sq_dists: Vec<Array2<f64>>,
    jitter: JitterSchedule,
}

impl FitContext {
    pub fn new(inputs: Array2<f64>, outputs: Array1<f64>, jitter: JitterSchedule) -> Self {
        let sq_dists = sq_dists_per_dim(&inputs);
        FitContext {
            inputs,
            outputs,
            sq_dists,
            jitter,
        }
    }

    pub fn evaluate(&self, hp: &KernelHyperparameters) -> Result<(f64, Array1<f64>)> {
        let n = self.inputs.nrows();
        let d = hp.dim();
        let noise = hp.noise_variance();

        let k = kernel_matrix(&self.inputs, hp);
        let mut m = k.clone();
        for i in 0..n {
            m[[i, i]] += noise;
        }
        let (factor, _) = decompose_with_jitter(&m, &self.jitter)?;
        let alpha = factor.solve_vec(&self.outputs);

        let value = -0.5 * self.outputs.dot(&alpha)
            - 0.5 * factor.log_det()
            - 0.5 * n as f64 * LN_2PI;

        // dLML/dθ = ½ tr((ααᵀ − M⁻¹) ∂M/∂θ); every ∂M/∂θ is symmetric, so
        // each trace reduces to an elementwise sum. B = (ααᵀ − M⁻¹) ⊙ K is
        // shared by the lengthscale and output-variance terms.
        let m_inv = factor.inverse();
        let ks = k.as_slice().expect("standard layout");
        let ms = m_inv.as_slice().expect("standard layout");
        let al = alpha.as_slice().expect("standard layout");
        let mut b = vec![0.0f64; n * n];
        let mut trace_a = 0.0;
        for i in 0..n {
            let arow = al[i];
            for j in 0..n {
                let a_ij = arow * al[j] - ms[i * n + j];
                b[i * n + j] = a_ij * ks[i * n + j];
                if i == j {
                    trace_a += a_ij;
                }
            }
        }

        let ls = hp.lengthscales();
        let mut grad = Array1::zeros(d + 2);
        for c in 0..d {
            // ∂M/∂log ℓ_c = K ⊙ S_c / ℓ_c².
            let sc = self.sq_dists[c].as_slice().expect("standard layout");
            let sum: f64 = b.iter().zip(sc).map(|(x, s)| x * s).sum();
            grad[c] = 0.5 * sum / (ls[c] * ls[c]);
        }
        // ∂M/∂log σ = K.
        grad[d] = 0.5 * b.iter().sum::<f64>();
        // ∂M/∂log σ_ε² = σ_ε² I.
        grad[d + 1] = 0.5 * noise * trace_a;

        Ok((value, grad))
    }
}
