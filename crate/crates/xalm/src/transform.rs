//! Input rescaling to the unit cube and output standardization.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::ScenarioSpace;

/// Per-dimension affine map between the practical box and `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl InputTransform {
    pub fn from_space(space: &ScenarioSpace) -> Self {
        InputTransform {
            mins: space.features().iter().map(|f| f.practical_min).collect(),
            maxs: space.features().iter().map(|f| f.practical_max).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    fn check_dim(&self, points: &Array2<f64>) -> Result<()> {
        if points.ncols() != self.dim() {
            return Err(Error::dim("input rescale", self.dim(), points.ncols()));
        }
        Ok(())
    }

    /// Maps practical-range points onto the unit cube. Out-of-range values are
    /// clamped to [0,1] and counted in a warning rather than rejected, so
    /// boundary-noisy external designs stay usable.
    pub fn forward(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(points)?;
        let mut clamped = 0usize;
        let mut out = points.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let u = (*v - self.mins[j]) / (self.maxs[j] - self.mins[j]);
                *v = if u < 0.0 {
                    clamped += 1;
                    0.0
                } else if u > 1.0 {
                    clamped += 1;
                    1.0
                } else {
                    u
                };
            }
        }
        if clamped > 0 {
            log::warn!("input rescale clamped {clamped} out-of-range coordinate(s) to [0,1]");
        }
        Ok(out)
    }

    /// Exact affine inverse of `forward` on the unit cube.
    pub fn inverse(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(points)?;
        let mut out = points.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.mins[j] + *v * (self.maxs[j] - self.mins[j]);
            }
        }
        Ok(out)
    }
}

/// Affine map taking outputs to zero mean and unit variance. Uses the
/// population convention (divisor N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTransform {
    pub mean: f64,
    pub std: f64,
}

impl OutputTransform {
    pub fn identity() -> Self {
        OutputTransform { mean: 0.0, std: 1.0 }
    }

    pub fn fit(outputs: &Array1<f64>) -> Result<Self> {
        if outputs.len() < 2 {
            return Err(Error::invalid(
                "output standardization needs at least two values",
            ));
        }
        let n = outputs.len() as f64;
        let mean = outputs.sum() / n;
        let var = outputs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::DegenerateOutputs);
        }
        Ok(OutputTransform { mean, std })
    }

    pub fn apply(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|y| (y - self.mean) / self.std)
    }

    pub fn invert(&self, values: &Array1<f64>) -> Array1<f64> {
        values.mapv(|y| y * self.std + self.mean)
    }

    pub fn apply_scalar(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert_scalar(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }

    /// Scales a variance from standardized to original output units.
    pub fn invert_variance(&self, var: f64) -> f64 {
        var * self.std * self.std
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::FeatureSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn table_space() -> ScenarioSpace {
        ScenarioSpace::new(vec![
            FeatureSpec::new("fuel_price", 0.0, 5.0, 1.0, "eur/kg").unwrap(),
            FeatureSpec::new("planning_horizon", 100.0, 1000.0, 300.0, "NM").unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn forward_maps_bounds_and_midpoint() {
        let t = InputTransform::from_space(&table_space());
        let u = t.forward(&array![[0.0, 550.0], [5.0, 100.0]]).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 0.0);
        assert_abs_diff_eq!(u[[0, 1]], 0.5);
        assert_abs_diff_eq!(u[[1, 0]], 1.0);
        assert_abs_diff_eq!(u[[1, 1]], 0.0);
    }

    #[test]
    fn forward_then_inverse_is_identity() {
        let t = InputTransform::from_space(&table_space());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = array![[rng.random_range(0.0..5.0), rng.random_range(100.0..1000.0)]];
            let back = t.inverse(&t.forward(&p).unwrap()).unwrap();
            assert_abs_diff_eq!(back[[0, 0]], p[[0, 0]], epsilon = 1e-12);
            assert_abs_diff_eq!(back[[0, 1]], p[[0, 1]], epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_then_forward_is_identity_on_cube() {
        let t = InputTransform::from_space(&table_space());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let u = array![[rng.random::<f64>(), rng.random::<f64>()]];
            let round = t.forward(&t.inverse(&u).unwrap()).unwrap();
            assert_abs_diff_eq!(round[[0, 0]], u[[0, 0]], epsilon = 1e-12);
            assert_abs_diff_eq!(round[[0, 1]], u[[0, 1]], epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_range_is_clamped() {
        let t = InputTransform::from_space(&table_space());
        let u = t.forward(&array![[-1.0, 2000.0]]).unwrap();
        assert_eq!(u[[0, 0]], 0.0);
        assert_eq!(u[[0, 1]], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let t = InputTransform::from_space(&table_space());
        assert!(t.forward(&array![[1.0]]).is_err());
        assert!(t.inverse(&array![[0.5, 0.5, 0.5]]).is_err());
    }

    #[test]
    fn standardize_uses_divisor_n() {
        let t = OutputTransform::fit(&array![2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(t.mean, 3.0);
        assert_abs_diff_eq!(t.std, 1.0);
        let z = t.apply(&array![2.0, 4.0]);
        assert_abs_diff_eq!(z[0], -1.0);
        assert_abs_diff_eq!(z[1], 1.0);
    }

    #[test]
    fn standardize_is_idempotent_on_standardized_data() {
        let raw = array![1.0, -2.0, 4.0, 0.5, -1.5, 3.0];
        let t = OutputTransform::fit(&raw).unwrap();
        let z = t.apply(&raw);
        let t2 = OutputTransform::fit(&z).unwrap();
        assert_abs_diff_eq!(t2.mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t2.std, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_outputs_are_degenerate() {
        assert!(matches!(
            OutputTransform::fit(&array![5.0, 5.0, 5.0]),
            Err(Error::DegenerateOutputs)
        ));
    }

    #[test]
    fn standardize_round_trip() {
        let raw = array![10.0, 20.0, 35.0, -4.0, 8.0];
        let t = OutputTransform::fit(&raw).unwrap();
        let back = t.invert(&t.apply(&raw));
        for (a, b) in back.iter().zip(raw.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }
}
