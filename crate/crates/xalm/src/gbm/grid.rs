//! Cross-validated grid search over boosting hyperparameters.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

use super::{rmse, GBMModel, GbmConfig};

/// Candidate lists for the search. The defaults span depths 3–9,
/// L2 ∈ {0, 0.1, …, 0.5}, rates {0.01, 0.05, 0.1, 0.2, 0.3, 0.4} with
/// 10 folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub max_depths: Vec<usize>,
    pub l2_values: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub folds: usize,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            max_depths: (3..=9).collect(),
            l2_values: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            learning_rates: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4],
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub max_depth: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GridCell,
    pub cells: Vec<GridCell>,
}

/// Scores every grid cell by mean held-out RMSE over seeded shuffled-block
/// folds. Ties break toward smaller depth, larger L2, then smaller rate.
pub fn grid_search(
    train: &LabeledDataset,
    spec: &GridSearchSpec,
    seed: u64,
    config: &GbmConfig,
) -> Result<GridSearchResult> {
    if spec.max_depths.is_empty() || spec.l2_values.is_empty() || spec.learning_rates.is_empty() {
        return Err(Error::invalid("grid search needs nonempty candidate lists"));
    }
    if spec.folds < 2 {
        return Err(Error::invalid("grid search needs at least two folds"));
    }
    if train.len() < spec.folds {
        return Err(Error::invalid(format!(
            "grid search needs at least {} rows for {} folds",
            spec.folds, spec.folds
        )));
    }

    let folds = assign_folds(train.len(), spec.folds, seed);
    let splits: Vec<(LabeledDataset, LabeledDataset)> = (0..spec.folds)
        .map(|f| split_fold(train, &folds, f))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &depth in &spec.max_depths {
        for &l2 in &spec.l2_values {
            for &rate in &spec.learning_rates {
                let mut scores = Vec::with_capacity(spec.folds);
                for (fit_part, held_out) in &splits {
                    let model =
                        GBMModel::fit(fit_part, Some(held_out), depth, l2, rate, config)?;
                    let preds = model.predict(held_out.inputs())?;
                    scores.push(rmse(&preds.view(), held_out.outputs()));
                }
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                    / scores.len() as f64;
                cells.push(GridCell {
                    max_depth: depth,
                    l2,
                    learning_rate: rate,
                    mean_rmse: mean,
                    std_rmse: var.sqrt(),
                });
            }
        }
    }

    let best = cells
        .iter()
        .min_by(|a, b| {
            a.mean_rmse
                .partial_cmp(&b.mean_rmse)
                .unwrap()
                .then(a.max_depth.cmp(&b.max_depth))
                .then(b.l2.partial_cmp(&a.l2).unwrap())
                .then(a.learning_rate.partial_cmp(&b.learning_rate).unwrap())
        })
        .expect("grid is nonempty")
        .clone();
    Ok(GridSearchResult { best, cells })
}

/// Shuffled contiguous blocks; the remainder rows go to the first folds.
fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let base = n / folds;
    let remainder = n % folds;
    let mut assignment = vec![0usize; n];
    let mut cursor = 0usize;
    for fold in 0..folds {
        let size = base + usize::from(fold < remainder);
        for &row in &order[cursor..cursor + size] {
            assignment[row] = fold;
        }
        cursor += size;
    }
    assignment
}

fn split_fold(
    data: &LabeledDataset,
    folds: &[usize],
    fold: usize,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut fit_rows = Vec::new();
    let mut held_rows = Vec::new();
    for (i, &f) in folds.iter().enumerate() {
        if f == fold {
            held_rows.push(i);
        } else {
            fit_rows.push(i);
        }
    }
    Ok((subset(data, &fit_rows)?, subset(data, &held_rows)?))
}

fn subset(data: &LabeledDataset, rows: &[usize]) -> Result<LabeledDataset> {
    let views: Vec<_> = rows.iter().map(|&i| data.inputs().row(i)).collect();
    let inputs = if views.is_empty() {
        Array2::zeros((0, data.dim()))
    } else {
        ndarray::stack(Axis(0), &views).expect("consistent rows")
    };
    let outputs = Array1::from_iter(rows.iter().map(|&i| data.outputs()[i]));
    LabeledDataset::new(inputs, outputs)
}

/// Writes cells as CSV (depth, l2, rate, mean_rmse, std_rmse).
pub fn export_grid_csv(result: &GridSearchResult, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("max_depth,l2,learning_rate,mean_rmse,std_rmse\n");
    for c in &result.cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.max_depth, c.l2, c.learning_rate, c.mean_rmse, c.std_rmse
        )
        .expect("string write");
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}
