//! Pool-based active learning: acquisition, the fit→predict→query loop,
//! stopping-criterion evaluation, and cross-KPI reuse of queried simulations.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, UnlabeledPool};
use crate::error::{Error, Result};
use crate::gp::{FitConfig, TrainedGP};
use crate::oracle::{derive_seed, Oracle};
use crate::space::ScenarioSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionStrategy {
    /// Query the unacquired pool row with maximal predictive variance.
    Uncertainty,
    /// Passive learning: uniform random queries.
    Random,
}

impl std::str::FromStr for AcquisitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(AcquisitionStrategy::Uncertainty),
            "random" => Ok(AcquisitionStrategy::Random),
            other => Err(Error::invalid(format!(
                "unknown strategy '{other}'; expected uncertainty or random"
            ))),
        }
    }
}

impl std::fmt::Display for AcquisitionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AcquisitionStrategy::Uncertainty => f.write_str("uncertainty"),
            AcquisitionStrategy::Random => f.write_str("random"),
        }
    }
}

/// Stop when the absolute difference of the stopping metric stays below
/// `threshold` for `patience` consecutive iterations, or when `max_budget`
/// labels have been acquired. A zero threshold disables the metric test, so
/// the loop always runs to budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingCriterion {
    pub threshold: f64,
    pub patience: usize,
    pub max_budget: usize,
}

impl StoppingCriterion {
    pub fn new(threshold: f64, patience: usize, max_budget: usize) -> Result<Self> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(Error::invalid("stopping threshold must be finite and >= 0"));
        }
        if patience == 0 {
            return Err(Error::invalid("stopping patience must be >= 1"));
        }
        Ok(StoppingCriterion {
            threshold,
            patience,
            max_budget,
        })
    }

    /// Budget-only criterion (threshold disabled).
    pub fn budget_only(max_budget: usize) -> Self {
        StoppingCriterion {
            threshold: 0.0,
            patience: 1,
            max_budget,
        }
    }
}

/// One row of the loop history. `acquired_index` is the pool row whose label
/// produced this iteration's training set (none for the initial design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub acquired_index: Option<usize>,
    pub n_labeled: usize,
    pub stopping_metric: f64,
    pub rmse_test: Option<f64>,
    pub rmse_shap: Option<f64>,
}

/// Everything a finished (or aborted) loop produced.
pub struct LoopHistory {
    pub records: Vec<IterationRecord>,
    pub final_gp: TrainedGP,
    /// Accumulated labeled set for the anchor KPI.
    pub labeled: LabeledDataset,
    /// Outputs for every KPI the oracle reports, aligned with `labeled`.
    pub all_outputs: Array2<f64>,
    pub kpi_names: Vec<String>,
    pub kpi_index: usize,
    pub initial_indices: Vec<usize>,
    /// Pool indices in acquisition order (excludes the initial design).
    pub acquired_indices: Vec<usize>,
    /// Oracle failure that aborted the loop, if any.
    pub failure: Option<String>,
}

impl LoopHistory {
    pub fn stopping_metrics(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.stopping_metric).collect()
    }

    pub fn final_n_labeled(&self) -> usize {
        self.records.last().map_or(0, |r| r.n_labeled)
    }

    /// One CSV row per iteration:
    /// iteration, pool_index, n_labeled, stopping_metric, rmse_test, rmse_shap.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,pool_index,n_labeled,stopping_metric,rmse_test,rmse_shap\n");
        for r in &self.records {
            let idx = r.acquired_index.map(|i| i.to_string()).unwrap_or_default();
            let rmse = r.rmse_test.map(|v| format!("{v}")).unwrap_or_default();
            let shap = r.rmse_shap.map(|v| format!("{v}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration, idx, r.n_labeled, r.stopping_metric, rmse, shap
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv())?;
        Ok(())
    }
}

/// Picks the next pool row to label. Uncertainty takes the unacquired row
/// with maximal predictive variance (ties broken by lowest index); random
/// draws uniformly, deterministic in `seed`.
pub fn acquire_next(
    gp: &TrainedGP,
    pool: &UnlabeledPool,
    strategy: AcquisitionStrategy,
    seed: u64,
) -> Result<usize> {
    let candidates = pool.unacquired_indices();
    if candidates.is_empty() {
        return Err(Error::invalid("pool exhausted; nothing left to acquire"));
    }
    match strategy {
        AcquisitionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick = rand::seq::index::sample(&mut rng, candidates.len(), 1).index(0);
            Ok(candidates[pick])
        }
        AcquisitionStrategy::Uncertainty => {
            let (matrix, indices) = pool.unacquired_matrix();
            let posterior = gp.predict(&matrix)?;
            let mut best = 0usize;
            for i in 1..indices.len() {
                if posterior.predictive_variance[i] > posterior.predictive_variance[best] {
                    best = i;
                }
            }
            Ok(indices[best])
        }
    }
}

/// Mean epistemic standard deviation over the unacquired pool rows, in
/// standardized output units (scale-free because outputs are standardized at
/// every refit).
pub fn stopping_metric(gp: &TrainedGP, pool: &UnlabeledPool) -> Result<f64> {
    let (matrix, indices) = pool.unacquired_matrix();
    if indices.is_empty() {
        return Err(Error::invalid("stopping metric needs a nonempty pool"));
    }
    let stds = gp.epistemic_std_standardized(&matrix)?;
    Ok(stds.sum() / stds.len() as f64)
}

/// True when the last `patience` consecutive absolute differences of the
/// stopping metric all lie below the threshold, or the labeled size reached
/// the budget.
pub fn check_stop(records: &[IterationRecord], criterion: &StoppingCriterion) -> bool {
    let Some(last) = records.last() else {
        return false;
    };
    if last.n_labeled >= criterion.max_budget {
        return true;
    }
    if records.len() < criterion.patience + 1 {
        return false;
    }
    records
        .windows(2)
        .rev()
        .take(criterion.patience)
        .all(|w| (w[1].stopping_metric - w[0].stopping_metric).abs() < criterion.threshold)
}

/// Per-iteration evaluation hooks (test RMSE, SHAP RMSE against a reference).
pub trait EvalHook {
    fn evaluate(&mut self, gp: &TrainedGP, labeled: &LabeledDataset) -> Result<HookMetrics>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HookMetrics {
    pub rmse_test: Option<f64>,
    pub rmse_shap: Option<f64>,
}

/// Hook that records nothing.
pub struct NoopHook;

impl EvalHook for NoopHook {
    fn evaluate(&mut self, _gp: &TrainedGP, _labeled: &LabeledDataset) -> Result<HookMetrics> {
        Ok(HookMetrics::default())
    }
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub strategy: AcquisitionStrategy,
    pub init_size: usize,
    pub criterion: StoppingCriterion,
    pub seed: u64,
    pub fit: FitConfig,
}

/// Runs the active-learning loop: label a random initial design, then
/// fit → predict pool → record → acquire → query the oracle, one point per
/// iteration, until the stopping criterion fires or the budget is exhausted.
///
/// Oracle failures after the initial design abort the loop and return the
/// partial history with `failure` set.
pub fn run_loop(
    oracle: &dyn Oracle,
    space: &ScenarioSpace,
    kpi: &str,
    mut pool: UnlabeledPool,
    config: &LoopConfig,
    hook: &mut dyn EvalHook,
) -> Result<LoopHistory> {
    let kpi_index = oracle
        .kpi_names()
        .iter()
        .position(|n| n == kpi)
        .ok_or_else(|| {
            Error::invalid(format!(
                "unknown kpi '{}'; oracle provides: {}",
                kpi,
                oracle.kpi_names().join(", ")
            ))
        })?;
    if config.init_size < 2 {
        return Err(Error::invalid("initial design needs at least two points"));
    }
    if config.init_size > pool.len() {
        return Err(Error::invalid("initial design larger than the pool"));
    }
    if config.criterion.max_budget < config.init_size {
        return Err(Error::invalid("budget smaller than the initial design"));
    }

    // Initial design: uniform random pool indices.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut initial_indices: Vec<usize> =
        rand::seq::index::sample(&mut rng, pool.len(), config.init_size).into_vec();
    initial_indices.sort_unstable();

    let init_rows: Vec<_> = initial_indices.iter().map(|&i| pool.row(i)).collect();
    let init_matrix = ndarray::stack(ndarray::Axis(0), &init_rows).expect("consistent rows");
    let init_ids: Vec<u64> = initial_indices.iter().map(|&i| i as u64).collect();
    let init_outputs = oracle.eval(&init_matrix, &init_ids)?;
    if init_outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::oracle("non-finite outputs for the initial design"));
    }
    for &i in &initial_indices {
        pool.mark_acquired(i)?;
    }

    let mut labeled = LabeledDataset::new(
        init_matrix.clone(),
        init_outputs.column(kpi_index).to_owned(),
    )?;
    let mut all_outputs = init_outputs;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut acquired_indices: Vec<usize> = Vec::new();
    let mut last_acquired: Option<usize> = None;
    let mut failure: Option<String> = None;

    let final_gp = loop {
        let gp = TrainedGP::fit(&labeled, space, &config.fit)?;
        let metric = if pool.n_unacquired() > 0 {
            stopping_metric(&gp, &pool)?
        } else {
            f64::NAN
        };
        let hook_metrics = hook.evaluate(&gp, &labeled)?;
        records.push(IterationRecord {
            iteration: records.len(),
            acquired_index: last_acquired,
            n_labeled: labeled.len(),
            stopping_metric: metric,
            rmse_test: hook_metrics.rmse_test,
            rmse_shap: hook_metrics.rmse_shap,
        });

        if check_stop(&records, &config.criterion) || pool.n_unacquired() == 0 {
            break gp;
        }

        let acq_seed = derive_seed(config.seed, 0x10_000 + records.len() as u64);
        let index = acquire_next(&gp, &pool, config.strategy, acq_seed)?;
        let row = pool.row(index).to_owned();
        let batch = row.clone().insert_axis(ndarray::Axis(0));
        match oracle.eval(&batch, &[index as u64]) {
            Ok(outputs) if outputs.iter().all(|v| v.is_finite()) => {
                pool.mark_acquired(index)?;
                labeled.push(row.view(), outputs[[0, kpi_index]])?;
                all_outputs
                    .push_row(outputs.row(0))
                    .expect("kpi count is fixed");
                acquired_indices.push(index);
                last_acquired = Some(index);
            }
            Ok(_) => {
                failure = Some(format!(
                    "oracle returned non-finite outputs for pool row {index}"
                ));
                break gp;
            }
            Err(e) => {
                failure = Some(format!("oracle failed for pool row {index}: {e}"));
                break gp;
            }
        }
    };

    Ok(LoopHistory {
        records,
        final_gp,
        labeled,
        all_outputs,
        kpi_names: oracle.kpi_names().to_vec(),
        kpi_index,
        initial_indices,
        acquired_indices,
        failure,
    })
}

/// Refits a GP on the inputs accumulated by a finished loop against another
/// KPI's outputs, spending no new oracle calls.
pub fn fit_on_reused(
    history: &LoopHistory,
    outputs: &Array1<f64>,
    space: &ScenarioSpace,
    config: &FitConfig,
) -> Result<TrainedGP> {
    if outputs.len() != history.labeled.len() {
        return Err(Error::dim(
            "reused outputs",
            history.labeled.len(),
            outputs.len(),
        ));
    }
    let data = LabeledDataset::new(history.labeled.inputs().clone(), outputs.clone())?;
    TrainedGP::fit(&data, space, config)
}
