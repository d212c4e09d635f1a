//! Gaussian-process regression with the ARD-RBF kernel.
//!
//! Fitting maximizes the log marginal likelihood over log-hyperparameters
//! with adaptive-moment gradient ascent (at most 300 steps, learning rate
//! 0.1, early stopping after 15 steps without improvement, best iterate
//! returned). Inputs are rescaled to the unit cube and outputs standardized
//! before fitting; predictions are mapped back to original units.

mod adam;
pub mod kernel;
pub mod likelihood;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{decompose_with_jitter, CholeskyFactor, JitterSchedule};
use crate::space::ScenarioSpace;
use crate::transform::{InputTransform, OutputTransform};

use adam::Adam;
pub use kernel::{ard_rbf, KernelHyperparameters};
pub use likelihood::log_marginal_likelihood;

/// Hyperparameter-search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_steps: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub jitter: JitterSchedule,
    /// Exact-GP size guard; fitting more points than this is refused.
    pub max_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_steps: 300,
            learning_rate: 0.1,
            patience: 15,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            jitter: JitterSchedule::default(),
            max_points: 2000,
        }
    }
}

/// A fitted GP: hyperparameters, transformed training data, and the cached
/// factorization of K_θ + σ_ε² I.
#[derive(Debug, Clone)]
pub struct TrainedGP {
    hyperparameters: KernelHyperparameters,
    /// Training inputs in unit-cube space.
    train_inputs: Array2<f64>,
    /// Training outputs in standardized space.
    train_outputs: Array1<f64>,
    chol: CholeskyFactor,
    alpha: Array1<f64>,
    input_transform: InputTransform,
    output_transform: OutputTransform,
    feature_names: Vec<String>,
    jitter: JitterSchedule,
    jitter_used: f64,
}

/// Posterior mean and variances at query points, in original output units.
#[derive(Debug, Clone, PartialEq)]
pub struct GPPosterior {
    pub mean: Array1<f64>,
    /// Noise-free posterior variance (diagonal of Σ*), clipped at zero.
    pub epistemic_variance: Array1<f64>,
    /// Epistemic variance plus the aleatoric noise σ_ε².
    pub predictive_variance: Array1<f64>,
}

/// Symmetric confidence and prediction intervals around the posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub ci_low: Array1<f64>,
    pub ci_high: Array1<f64>,
    pub pi_low: Array1<f64>,
    pub pi_high: Array1<f64>,
}

impl TrainedGP {
    /// Fits hyperparameters by maximum marginal likelihood.
    pub fn fit(data: &LabeledDataset, space: &ScenarioSpace, config: &FitConfig) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::invalid("gp fit needs at least two points"));
        }
        if data.len() > config.max_points {
            return Err(Error::invalid(format!(
                "gp fit limited to {} points (exact inference); got {}",
                config.max_points,
                data.len()
            )));
        }
        if data.dim() != space.dim() {
            return Err(Error::dim("gp fit inputs", space.dim(), data.dim()));
        }

        let input_transform = InputTransform::from_space(space);
        let output_transform = OutputTransform::fit(data.outputs())?;
        let x = input_transform.forward(data.inputs())?;
        let y = output_transform.apply(data.outputs());

        let context = likelihood::FitContext::new(x.clone(), y.clone(), config.jitter);
        let mut params = KernelHyperparameters::init(space.dim()).pack();
        let (mut value, mut gradient) =
            context.evaluate(&KernelHyperparameters::unpack(&params))?;
        let mut best_value = value;
        let mut best_params = params.clone();
        let mut since_best = 0usize;
        let mut adam = Adam::new(
            params.len(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        );

        for _ in 0..config.max_steps {
            adam.step(&mut params, &gradient);
            let hp = KernelHyperparameters::unpack(&params);
            let step_result = hp.validate().and_then(|_| context.evaluate(&hp));
            match step_result {
                Ok((v, g)) if v.is_finite() => {
                    value = v;
                    gradient = g;
                    if value > best_value {
                        best_value = value;
                        best_params.assign(&params);
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if since_best >= config.patience {
                            break;
                        }
                    }
                }
                _ => {
                    log::warn!(
                        "non-finite marginal likelihood during gp fit; keeping best parameters"
                    );
                    break;
                }
            }
        }

        let hyperparameters = KernelHyperparameters::unpack(&best_params);
        Self::assemble(
            x,
            y,
            hyperparameters,
            input_transform,
            output_transform,
            space.feature_names(),
            config.jitter,
        )
    }

    /// Builds a GP with fixed hyperparameters and no optimization. Inputs are
    /// rescaled by the space; outputs are taken as already standardized
    /// (identity output transform).
    pub fn with_hyperparameters(
        data: &LabeledDataset,
        space: &ScenarioSpace,
        hyperparameters: KernelHyperparameters,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("gp needs at least one training point"));
        }
        if data.dim() != space.dim() {
            return Err(Error::dim("gp inputs", space.dim(), data.dim()));
        }
        hyperparameters.validate()?;
        if hyperparameters.dim() != space.dim() {
            return Err(Error::dim(
                "gp hyperparameters",
                space.dim(),
                hyperparameters.dim(),
            ));
        }
        let input_transform = InputTransform::from_space(space);
        let x = input_transform.forward(data.inputs())?;
        Self::assemble(
            x,
            data.outputs().clone(),
            hyperparameters,
            input_transform,
            OutputTransform::identity(),
            space.feature_names(),
            JitterSchedule::default(),
        )
    }

    fn assemble(
        train_inputs: Array2<f64>,
        train_outputs: Array1<f64>,
        hyperparameters: KernelHyperparameters,
        input_transform: InputTransform,
        output_transform: OutputTransform,
        feature_names: Vec<String>,
        jitter: JitterSchedule,
    ) -> Result<Self> {
        let n = train_inputs.nrows();
        let mut m = kernel::kernel_matrix(&train_inputs, &hyperparameters);
        let noise = hyperparameters.noise_variance();
        for i in 0..n {
            m[[i, i]] += noise;
        }
        let (chol, jitter_used) = decompose_with_jitter(&m, &jitter)?;
        let alpha = chol.solve_vec(&train_outputs);
        Ok(TrainedGP {
            hyperparameters,
            train_inputs,
            train_outputs,
            chol,
            alpha,
            input_transform,
            output_transform,
            feature_names,
            jitter,
            jitter_used,
        })
    }

    pub fn len(&self) -> usize {
        self.train_inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.train_inputs.ncols()
    }

    pub fn hyperparameters(&self) -> &KernelHyperparameters {
        &self.hyperparameters
    }

    pub fn input_transform(&self) -> &InputTransform {
        &self.input_transform
    }

    pub fn output_transform(&self) -> &OutputTransform {
        &self.output_transform
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Lower-triangular factor of K_θ + σ_ε² I (jitter included).
    pub fn chol_factor(&self) -> &Array2<f64> {
        self.chol.lower()
    }

    /// Diagonal jitter that was added before factorization.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Precomputed (K_θ + σ_ε² I)⁻¹ y.
    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn train_inputs(&self) -> &Array2<f64> {
        &self.train_inputs
    }

    pub fn train_outputs(&self) -> &Array1<f64> {
        &self.train_outputs
    }

    /// Posterior at query points given in original feature units.
    pub fn predict(&self, query: &Array2<f64>) -> Result<GPPosterior> {
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query contains non-finite values"));
        }
        let x = self.input_transform.forward(query)?;
        let (mean_std, epi_std, pred_std) = self.predict_standardized_cube(&x);
        let std = self.output_transform.std;
        Ok(GPPosterior {
            mean: mean_std.mapv(|m| self.output_transform.invert_scalar(m)),
            epistemic_variance: epi_std.mapv(|v| v * std * std),
            predictive_variance: pred_std.mapv(|v| v * std * std),
        })
    }

    /// Posterior in standardized output units at unit-cube query points.
    pub(crate) fn predict_standardized_cube(
        &self,
        x: &Array2<f64>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let m = x.nrows();
        if m == 0 {
            return (Array1::zeros(0), Array1::zeros(0), Array1::zeros(0));
        }
        let sigma = self.hyperparameters.output_variance();
        let noise = self.hyperparameters.noise_variance();
        let k_cross = kernel::cross_kernel(x, &self.train_inputs, &self.hyperparameters);
        let mean = k_cross.dot(&self.alpha);
        // Σ*_ii = σ − k*ᵀ M⁻¹ k* computed via v = L⁻¹ k* per query row.
        let v = self.chol.solve_lower_rows(&k_cross);
        let mut epi = Array1::zeros(m);
        for (q, row) in v.rows().into_iter().enumerate() {
            let reduction: f64 = row.iter().map(|val| val * val).sum();
            epi[q] = (sigma - reduction).max(0.0);
        }
        let pred = epi.mapv(|e| e + noise);
        (mean, epi, pred)
    }

    /// Epistemic standard deviation in standardized output units; the active
    /// learning stopping metric is the mean of this over the pool.
    pub(crate) fn epistemic_std_standardized(&self, query: &Array2<f64>) -> Result<Array1<f64>> {
        let x = self.input_transform.forward(query)?;
        let (_, epi, _) = self.predict_standardized_cube(&x);
        Ok(epi.mapv(f64::sqrt))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GpModelFile {
            format_version: FORMAT_VERSION,
            model_type: "gp".into(),
            hyperparameters: self.hyperparameters.clone(),
            input_transform: self.input_transform.clone(),
            output_transform: self.output_transform.clone(),
            train_inputs: self.train_inputs.clone(),
            train_outputs: self.train_outputs.clone(),
            feature_names: self.feature_names.clone(),
            jitter: self.jitter,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Rebuilds a GP from its JSON document; the Cholesky factor is
    /// recomputed rather than stored.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GpModelFile = serde_json::from_str(text)?;
        if file.model_type != "gp" {
            return Err(Error::ModelSchema(format!(
                "expected model_type 'gp', found '{}'",
                file.model_type
            )));
        }
        if file.format_version != FORMAT_VERSION {
            return Err(Error::ModelSchema(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        Self::assemble(
            file.train_inputs,
            file.train_outputs,
            file.hyperparameters,
            file.input_transform,
            file.output_transform,
            file.feature_names,
            file.jitter,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GpModelFile {
    format_version: u32,
    model_type: String,
    hyperparameters: KernelHyperparameters,
    input_transform: InputTransform,
    output_transform: OutputTransform,
    train_inputs: Array2<f64>,
    train_outputs: Array1<f64>,
    feature_names: Vec<String>,
    jitter: JitterSchedule,
}

/// Central CI/PI bounds: CI = μ ± z·√epistemic, PI = μ ± z·√predictive with z
/// the standard-normal quantile of (1+level)/2.
pub fn intervals(posterior: &GPPosterior, level: f64) -> Result<Intervals> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("interval level must lie in (0,1)"));
    }
    let z = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    let n = posterior.mean.len();
    let mut out = Intervals {
        ci_low: Array1::zeros(n),
        ci_high: Array1::zeros(n),
        pi_low: Array1::zeros(n),
        pi_high: Array1::zeros(n),
    };
    for i in 0..n {
        let ci_half = z * posterior.epistemic_variance[i].sqrt();
        let pi_half = z * posterior.predictive_variance[i].sqrt();
        out.ci_low[i] = posterior.mean[i] - ci_half;
        out.ci_high[i] = posterior.mean[i] + ci_half;
        out.pi_low[i] = posterior.mean[i] - pi_half;
        out.pi_high[i] = posterior.mean[i] + pi_half;
    }
    Ok(out)
}
