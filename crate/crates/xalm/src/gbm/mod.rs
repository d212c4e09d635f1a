//! Gradient-boosted regression trees: stage-wise squared-error boosting with
//! shrinkage, validation-based early stopping, and cross-validated grid
//! search over (depth, L2, learning rate).

mod grid;
mod tree;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::predictor::Predictor;

pub use grid::{export_grid_csv, grid_search, GridCell, GridSearchResult, GridSearchSpec};
pub use tree::{RegressionTree, TreeNode};

/// Boosting-run limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    pub max_stages: usize,
    /// Boosting stops after this many stages without validation improvement.
    pub early_stopping_patience: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            max_stages: 1000,
            early_stopping_patience: 5,
        }
    }
}

/// Stage-wise ensemble F(x) = base + rate · Σ_m h_m(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBMModel {
    trees: Vec<RegressionTree>,
    learning_rate: f64,
    l2_lambda: f64,
    base_score: f64,
    max_depth: usize,
}

impl GBMModel {
    /// Fits boosting stages on residuals. With a validation set, stops after
    /// `patience` stages without RMSE improvement and truncates the ensemble
    /// to the best stage seen (the bare base score counts as stage zero);
    /// without one, runs all `max_stages`.
    pub fn fit(
        train: &LabeledDataset,
        valid: Option<&LabeledDataset>,
        max_depth: usize,
        l2_lambda: f64,
        learning_rate: f64,
        config: &GbmConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("gbm fit needs at least one training row"));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::invalid("learning rate must lie in (0, 1]"));
        }
        if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
            return Err(Error::invalid("l2 regularization must be >= 0"));
        }
        if let Some(v) = valid {
            if v.dim() != train.dim() {
                return Err(Error::dim("gbm validation set", train.dim(), v.dim()));
            }
        }

        let y = train.outputs();
        let base_score = y.sum() / y.len() as f64;
        let mut train_pred = Array1::from_elem(train.len(), base_score);
        let mut valid_pred = valid.map(|v| Array1::from_elem(v.len(), base_score));

        let mut trees: Vec<RegressionTree> = Vec::new();
        let mut best_stage = 0usize;
        let mut best_rmse = valid.map(|v| rmse(&valid_pred.as_ref().unwrap().view(), v.outputs()));
        let mut since_best = 0usize;

        for _ in 0..config.max_stages {
            let residuals = y - &train_pred;
            let tree = RegressionTree::fit(train.inputs(), &residuals, max_depth, l2_lambda);
            for (i, row) in train.inputs().rows().into_iter().enumerate() {
                train_pred[i] += learning_rate * tree.predict_row(row);
            }
            if let (Some(v), Some(vp)) = (valid, valid_pred.as_mut()) {
                for (i, row) in v.inputs().rows().into_iter().enumerate() {
                    vp[i] += learning_rate * tree.predict_row(row);
                }
            }
            trees.push(tree);

            if let Some(v) = valid {
                let current = rmse(&valid_pred.as_ref().unwrap().view(), v.outputs());
                if current < best_rmse.expect("tracked with validation") {
                    best_rmse = Some(current);
                    best_stage = trees.len();
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.early_stopping_patience {
                        break;
                    }
                }
            } else {
                best_stage = trees.len();
            }
        }

        trees.truncate(best_stage);
        Ok(GBMModel {
            trees,
            learning_rate,
            l2_lambda,
            base_score,
            max_depth,
        })
    }

    pub fn predict(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        let mut out = Array1::from_elem(points.nrows(), self.base_score);
        for tree in &self.trees {
            for (i, row) in points.rows().into_iter().enumerate() {
                out[i] += self.learning_rate * tree.predict_row(row);
            }
        }
        Ok(out)
    }

    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2_lambda
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GbmModelFile {
            format_version: FORMAT_VERSION,
            model_type: "gbm".into(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GbmModelFile = serde_json::from_str(text)?;
        if file.model_type != "gbm" {
            return Err(Error::ModelSchema(format!(
                "expected model_type 'gbm', found '{}'",
                file.model_type
            )));
        }
        if file.format_version != FORMAT_VERSION {
            return Err(Error::ModelSchema(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path.as_ref())?)
    }
}

impl Predictor for GBMModel {
    fn predict_batch(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        self.predict(points)
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GbmModelFile {
    format_version: u32,
    model_type: String,
    model: GBMModel,
}

pub(crate) fn rmse(predictions: &ndarray::ArrayView1<'_, f64>, truth: &Array1<f64>) -> f64 {
    let n = truth.len();
    let sum: f64 = predictions
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sum / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn linear_data(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let outputs = Array1::from_shape_fn(n, |i| 3.0 * inputs[[i, 0]] + 1.0);
        LabeledDataset::new(inputs, outputs).unwrap()
    }

    #[test]
    fn converges_on_a_noiseless_linear_target() {
        let train = linear_data(200, 1);
        let config = GbmConfig {
            max_stages: 200,
            early_stopping_patience: 5,
        };
        let model = GBMModel::fit(&train, None, 3, 0.0, 0.1, &config).unwrap();
        let preds = model.predict(train.inputs()).unwrap();
        let err = rmse(&preds.view(), train.outputs());
        let target_std = {
            let m = train.outputs().mean().unwrap();
            (train.outputs().mapv(|y| (y - m) * (y - m)).sum() / 200.0).sqrt()
        };
        assert!(err < 0.05 * target_std, "rmse {err} vs std {target_std}");
    }

    #[test]
    fn training_rmse_is_non_increasing_per_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = Array2::from_shape_fn((60, 2), |_| rng.random_range(-1.0f64..1.0));
        let outputs = Array1::from_shape_fn(60, |i| {
            (2.0 * inputs[[i, 0]]).sin() + inputs[[i, 1]] + 0.1 * rng.random_range(-1.0f64..1.0)
        });
        let train = LabeledDataset::new(inputs, outputs).unwrap();
        // Refit ensembles of increasing length; the exact residual fit makes
        // each prefix of a longer run identical to the shorter run.
        let config = GbmConfig {
            max_stages: 40,
            early_stopping_patience: 5,
        };
        let model = GBMModel::fit(&train, None, 3, 0.1, 0.3, &config).unwrap();
        let mut pred = Array1::from_elem(train.len(), model.base_score());
        let mut previous = rmse(&pred.view(), train.outputs());
        for tree in &model.trees {
            for (i, row) in train.inputs().rows().into_iter().enumerate() {
                pred[i] += model.learning_rate() * tree.predict_row(row);
            }
            let current = rmse(&pred.view(), train.outputs());
            assert!(current <= previous + 1e-10, "{current} > {previous}");
            previous = current;
        }
    }

    #[test]
    fn early_stopping_truncates_to_best_stage() {
        // Validation disagreeing with training: best at some middle stage,
        // then patience-5 exhausts.
        let train = linear_data(50, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v_inputs = Array2::from_shape_fn((30, 1), |_| rng.random_range(-1.0..1.0));
        // Mismatched validation labels force overfitting to show quickly.
        let v_outputs = Array1::from_shape_fn(30, |i| -1.0 * v_inputs[[i, 0]] + 0.4);
        let valid = LabeledDataset::new(v_inputs, v_outputs).unwrap();
        let config = GbmConfig::default();
        let model = GBMModel::fit(&train, Some(&valid), 2, 0.0, 0.3, &config).unwrap();
        assert!(model.n_stages() < 1000);
        // The returned model's validation RMSE equals the best stage seen:
        // refit with patience high enough to see all stages and compare.
        let full = GBMModel::fit(
            &train,
            None,
            2,
            0.0,
            0.3,
            &GbmConfig {
                max_stages: model.n_stages() + 20,
                early_stopping_patience: usize::MAX,
            },
        )
        .unwrap();
        let best_prefix_rmse = {
            let mut pred = Array1::from_elem(valid.len(), full.base_score());
            let mut best = rmse(&pred.view(), valid.outputs());
            for tree in &full.trees {
                for (i, row) in valid.inputs().rows().into_iter().enumerate() {
                    pred[i] += full.learning_rate() * tree.predict_row(row);
                }
                best = best.min(rmse(&pred.view(), valid.outputs()));
            }
            best
        };
        let returned = rmse(&model.predict(valid.inputs()).unwrap().view(), valid.outputs());
        assert!(returned <= best_prefix_rmse + 1e-12);
    }

    #[test]
    fn validation_worsening_from_the_start_returns_the_base_model() {
        let train = LabeledDataset::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![0.0, 1.0, 2.0, 3.0],
        )
        .unwrap();
        // Every stage moves the validation prediction away from 10, so the
        // base-score-only model is the best stage and patience 5 ends the
        // run after five futile stages.
        let valid = LabeledDataset::new(array![[0.5]], array![10.0]).unwrap();
        let model =
            GBMModel::fit(&train, Some(&valid), 1, 0.0, 1.0, &GbmConfig::default()).unwrap();
        assert_eq!(model.n_stages(), 0);
        let pred = model.predict(&array![[0.5]]).unwrap();
        assert_abs_diff_eq!(pred[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn single_stage_with_unit_rate_and_depth_zero_predicts_the_mean() {
        let train = LabeledDataset::new(array![[0.0], [1.0], [2.0]], array![1.0, 2.0, 6.0]).unwrap();
        let config = GbmConfig {
            max_stages: 1,
            early_stopping_patience: 5,
        };
        let model = GBMModel::fit(&train, None, 0, 0.0, 1.0, &config).unwrap();
        let preds = model.predict(&array![[5.0], [-3.0]]).unwrap();
        assert_abs_diff_eq!(preds[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(preds[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let model = GBMModel {
            trees: vec![],
            learning_rate: 0.1,
            l2_lambda: 0.0,
            base_score: 2.5,
            max_depth: 3,
        };
        let preds = model.predict(&array![[0.0], [9.0]]).unwrap();
        assert_eq!(preds.to_vec(), vec![2.5, 2.5]);
    }

    #[test]
    fn hand_built_two_tree_model_matches_manual_evaluation() {
        let t1 = RegressionTree::fit(&array![[0.0], [2.0]], &array![-1.0, 1.0], 1, 0.0);
        let t2 = RegressionTree::fit(&array![[0.0], [2.0]], &array![2.0, 4.0], 0, 0.0);
        let model = GBMModel {
            trees: vec![t1.clone(), t2.clone()],
            learning_rate: 0.5,
            l2_lambda: 0.0,
            base_score: 1.0,
            max_depth: 1,
        };
        let points = array![[0.0], [2.0], [1.2]];
        let preds = model.predict(&points).unwrap();
        for (i, row) in points.rows().into_iter().enumerate() {
            let manual = 1.0 + 0.5 * (t1.predict_row(row) + t2.predict_row(row));
            assert_abs_diff_eq!(preds[i], manual, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let train = linear_data(10, 2);
        let config = GbmConfig::default();
        assert!(GBMModel::fit(&train, None, 3, 0.0, 0.0, &config).is_err());
        assert!(GBMModel::fit(&train, None, 3, 0.0, 1.5, &config).is_err());
        assert!(GBMModel::fit(&train, None, 3, -0.1, 0.5, &config).is_err());
        let empty = LabeledDataset::empty(1);
        assert!(GBMModel::fit(&empty, None, 3, 0.0, 0.5, &config).is_err());
    }

    #[test]
    fn predictions_are_invariant_to_monotone_feature_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = Array2::from_shape_fn((40, 2), |_| rng.random_range(0.1..2.0));
        let outputs = Array1::from_shape_fn(40, |i| inputs[[i, 0]] * inputs[[i, 1]]);
        let train = LabeledDataset::new(inputs.clone(), outputs.clone()).unwrap();
        // Strictly monotone per-feature maps preserve all orderings.
        let warped_inputs = inputs.mapv(|v| v * v * v + 2.0 * v);
        let warped = LabeledDataset::new(warped_inputs.clone(), outputs).unwrap();
        let config = GbmConfig {
            max_stages: 25,
            early_stopping_patience: 5,
        };
        let a = GBMModel::fit(&train, None, 3, 0.1, 0.3, &config).unwrap();
        let b = GBMModel::fit(&warped, None, 3, 0.1, 0.3, &config).unwrap();
        let pa = a.predict(&inputs).unwrap();
        let pb = b.predict(&warped_inputs).unwrap();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let train = linear_data(30, 21);
        let config = GbmConfig {
            max_stages: 20,
            early_stopping_patience: 5,
        };
        let model = GBMModel::fit(&train, None, 2, 0.2, 0.3, &config).unwrap();
        let text = model.to_json().unwrap();
        let loaded = GBMModel::from_json(&text).unwrap();
        assert_eq!(model, loaded);
        assert!(GBMModel::from_json("{\"format_version\":1,\"model_type\":\"gp\"}").is_err());
    }
}
