//! Sampling designs over a scenario space.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::ScenarioSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    #[default]
    LatinHypercube,
    Uniform,
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lhs" | "latin_hypercube" => Ok(DesignKind::LatinHypercube),
            "uniform" => Ok(DesignKind::Uniform),
            other => Err(Error::invalid(format!(
                "unknown design kind '{other}'; expected lhs or uniform"
            ))),
        }
    }
}

pub fn sample(kind: DesignKind, n: usize, space: &ScenarioSpace, seed: u64) -> Result<Array2<f64>> {
    match kind {
        DesignKind::LatinHypercube => latin_hypercube(n, space, seed),
        DesignKind::Uniform => uniform(n, space, seed),
    }
}

/// Latin hypercube design: per dimension, exactly one sample falls in each of
/// the `n` equal-width strata of the practical range. Strata are shuffled
/// independently per dimension and each sample sits uniformly at random
/// within its stratum.
pub fn latin_hypercube(n: usize, space: &ScenarioSpace, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("latin hypercube needs n >= 1"));
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    for (j, feature) in space.features().iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for i in 0..n {
            let u = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
            out[[i, j]] = feature.practical_min + u * feature.width();
        }
    }
    Ok(out)
}

/// Independent uniform draws over the practical box.
pub fn uniform(n: usize, space: &ScenarioSpace, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid("uniform design needs n >= 1"));
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for (j, feature) in space.features().iter().enumerate() {
            out[[i, j]] = feature.practical_min + rng.random::<f64>() * feature.width();
        }
    }
    Ok(out)
}
