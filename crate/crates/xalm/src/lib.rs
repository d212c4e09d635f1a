//! Simulation metamodelling toolkit: Gaussian-process surrogates built with
//! pool-based active learning, Kernel SHAP explanations, a gradient-boosted
//! tree baseline, and an experiment harness for comparing them on synthetic
//! or external black-box oracles.

pub mod active;
pub mod dataset;
pub mod design;
pub mod error;
pub mod gbm;
pub mod gp;
pub mod linalg;
pub mod oracle;
pub mod predictor;
pub mod shap;
pub mod space;
pub mod transform;

pub use dataset::{load_dataset, save_dataset, KpiDataset, LabeledDataset, UnlabeledPool};
pub use design::DesignKind;
pub use error::{Error, Result};
pub use space::{FeatureSpec, ScenarioSpace};
pub use transform::{InputTransform, OutputTransform};
