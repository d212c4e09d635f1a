//! Scenario spaces: named input features with practical ranges and defaults.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input feature of a simulator scenario. The unit is free text ("-" when
/// dimensionless).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub practical_min: f64,
    pub practical_max: f64,
    pub default: f64,
    pub unit: String,
}

impl FeatureSpec {
    pub fn new(
        name: impl Into<String>,
        practical_min: f64,
        practical_max: f64,
        default: f64,
        unit: impl Into<String>,
    ) -> Result<Self> {
        let spec = FeatureSpec {
            name: name.into(),
            practical_min,
            practical_max,
            default,
            unit: unit.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("feature name must be nonempty"));
        }
        if !(self.practical_min.is_finite() && self.practical_max.is_finite()) {
            return Err(Error::invalid(format!(
                "feature '{}': practical range must be finite",
                self.name
            )));
        }
        if self.practical_min >= self.practical_max {
            return Err(Error::invalid(format!(
                "feature '{}': practical_min must be < practical_max",
                self.name
            )));
        }
        if !(self.default >= self.practical_min && self.default <= self.practical_max) {
            return Err(Error::invalid(format!(
                "feature '{}': default {} outside practical range [{}, {}]",
                self.name, self.default, self.practical_min, self.practical_max
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.practical_max - self.practical_min
    }
}

/// Ordered list of features defining the box the metamodel operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpace {
    features: Vec<FeatureSpec>,
}

impl ScenarioSpace {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("scenario space needs at least one feature"));
        }
        for f in &features {
            f.validate()?;
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::invalid(format!(
                    "duplicate feature name '{}'",
                    f.name
                )));
            }
        }
        Ok(ScenarioSpace { features })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn defaults(&self) -> Array1<f64> {
        self.features.iter().map(|f| f.default).collect()
    }

    /// True when every coordinate lies inside the practical box (bounds
    /// inclusive).
    pub fn contains(&self, point: ArrayView1<'_, f64>) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.features)
                .all(|(&x, f)| x >= f.practical_min && x <= f.practical_max)
    }
}
