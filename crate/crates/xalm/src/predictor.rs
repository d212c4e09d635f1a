//! Shared point-prediction interface for models that explainers and metrics
//! consume.

use ndarray::{Array1, Array2};

use crate::error::Result;

/// Batched scalar prediction. Implementations must tolerate concurrent
/// read-only evaluation.
pub trait Predictor: Sync {
    fn predict_batch(&self, points: &Array2<f64>) -> Result<Array1<f64>>;
}

impl Predictor for crate::gp::TrainedGP {
    fn predict_batch(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.predict(points)?.mean)
    }
}

/// Closure-backed predictor for tests and composed models.
pub struct FnPredictor<F> {
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&Array2<f64>) -> Array1<f64> + Sync,
{
    pub fn new(f: F) -> Self {
        FnPredictor { f }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Array2<f64>) -> Array1<f64> + Sync,
{
    fn predict_batch(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        Ok((self.f)(points))
    }
}
