//! Kernel SHAP: additive feature attributions for any predictor, computed by
//! exact coalition enumeration for small d or weighted-regression sampling
//! otherwise.
//!
//! Missing features are imputed interventionally: the value of a coalition is
//! the mean model output over the background rows with the coalition's
//! features taken from the explained point.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predictor::Predictor;

/// Hard ceiling for full 2^d enumeration.
pub const EXACT_DIM_LIMIT: usize = 16;

/// Default cap on background rows taken from a training set.
pub const DEFAULT_BACKGROUND_CAP: usize = 100;

/// Reference rows used to impute absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Array2<f64>,
}

impl BackgroundSet {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::invalid("background set needs at least one row"));
        }
        Ok(BackgroundSet { rows })
    }

    /// Deterministic evenly-strided subsample capped at `cap` rows; the
    /// default background is the current training inputs under
    /// [`DEFAULT_BACKGROUND_CAP`].
    pub fn subsample(inputs: &Array2<f64>, cap: usize) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::invalid("background set needs at least one row"));
        }
        if n <= cap {
            return Self::new(inputs.clone());
        }
        let picked: Vec<_> = (0..cap)
            .map(|i| inputs.row(i * n / cap))
            .collect();
        Self::new(ndarray::stack(ndarray::Axis(0), &picked).expect("consistent rows"))
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// Additive explanation of one prediction: f(x) = φ₀ + Σᵢ φᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub attributions: Array1<f64>,
    pub explained_point: Array1<f64>,
    pub model_output: f64,
}

impl ShapExplanation {
    pub fn dim(&self) -> usize {
        self.attributions.len()
    }
}

/// Explanations of a fixed evaluation set, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSet {
    pub feature_names: Vec<String>,
    pub explanations: Vec<ShapExplanation>,
}

impl ExplanationSet {
    pub fn new(feature_names: Vec<String>, explanations: Vec<ShapExplanation>) -> Result<Self> {
        let d = feature_names.len();
        if explanations.iter().any(|e| e.dim() != d) {
            return Err(Error::invalid(
                "explanations disagree with the feature names on dimension",
            ));
        }
        Ok(ExplanationSet {
            feature_names,
            explanations,
        })
    }

    pub fn len(&self) -> usize {
        self.explanations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explanations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean |φ| per feature.
    pub fn mean_abs_attributions(&self) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim());
        for e in &self.explanations {
            acc += &e.attributions.mapv(f64::abs);
        }
        acc / self.explanations.len().max(1) as f64
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut value = 1.0;
    for i in 0..k {
        value = value * (n - i) as f64 / (i + 1) as f64;
    }
    value
}

/// Kernel SHAP coalition weight (d−1) / (C(d,s) · s · (d−s)). The empty and
/// full coalitions are handled as equality constraints, not weights.
pub fn shapley_kernel_weight(d: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= d {
        return Err(Error::invalid(
            "kernel weight defined only for 0 < s < d; bounds are hard constraints",
        ));
    }
    Ok((d - 1) as f64 / (binomial(d, s) * (s * (d - s)) as f64))
}

/// Evaluates the coalition value function: for each mask, the mean model
/// output over background rows with masked-in features taken from `x`.
fn coalition_values(
    model: &dyn Predictor,
    x: ArrayView1<'_, f64>,
    background: &BackgroundSet,
    masks: &[u64],
) -> Result<Vec<f64>> {
    let d = x.len();
    let b = background.len();
    let bg = background.rows();
    let mut values = Vec::with_capacity(masks.len());
    // Keep batches near 32k rows so huge enumerations stay in cache-sized
    // chunks.
    let chunk = (32_768 / b).max(1);
    for group in masks.chunks(chunk) {
        let mut hybrid = Array2::zeros((group.len() * b, d));
        for (g, &mask) in group.iter().enumerate() {
            for r in 0..b {
                for j in 0..d {
                    hybrid[[g * b + r, j]] = if mask >> j & 1 == 1 { x[j] } else { bg[[r, j]] };
                }
            }
        }
        let outputs = model.predict_batch(&hybrid)?;
        for g in 0..group.len() {
            let sum: f64 = outputs.slice(ndarray::s![g * b..(g + 1) * b]).sum();
            values.push(sum / b as f64);
        }
    }
    Ok(values)
}

/// Solves the constrained weighted least squares after eliminating φ₀ and the
/// last attribution through v(∅) = φ₀ and v(full) = φ₀ + Σφ.
fn solve_attributions(
    d: usize,
    masks: &[u64],
    weights: &[f64],
    values: &[f64],
    v_empty: f64,
    v_full: f64,
) -> Result<Array1<f64>> {
    let total = v_full - v_empty;
    if d == 1 {
        return Ok(ndarray::array![total]);
    }
    let m = d - 1;
    let mut normal = vec![0.0f64; m * m];
    let mut rhs = vec![0.0f64; m];
    let mut row = vec![0.0f64; m];
    for ((&mask, &w), &v) in masks.iter().zip(weights).zip(values) {
        let last = (mask >> (d - 1) & 1) as f64;
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = (mask >> j & 1) as f64 - last;
        }
        let y = v - v_empty - last * total;
        for i in 0..m {
            if row[i] == 0.0 {
                continue;
            }
            let wi = w * row[i];
            rhs[i] += wi * y;
            for j in 0..m {
                normal[i * m + j] += wi * row[j];
            }
        }
    }
    let head = solve_dense(m, &mut normal, &mut rhs)?;
    let mut phi = Array1::zeros(d);
    let mut sum = 0.0;
    for j in 0..m {
        phi[j] = head[j];
        sum += head[j];
    }
    phi[d - 1] = total - sum;
    Ok(phi)
}

/// Gaussian elimination with partial pivoting on an m×m system.
fn solve_dense(m: usize, a: &mut [f64], b: &mut [f64]) -> Result<Vec<f64>> {
    const PIVOT_TOLERANCE: f64 = 1e-10;
    for col in 0..m {
        let mut pivot = col;
        for r in col + 1..m {
            if a[r * m + col].abs() > a[pivot * m + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * m + col].abs() < PIVOT_TOLERANCE {
            return Err(Error::Numerical(
                "singular weighted regression system; sample more coalitions".into(),
            ));
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * m + col];
        for r in col + 1..m {
            let factor = a[r * m + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..m {
                a[r * m + j] -= factor * a[col * m + j];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; m];
    for i in (0..m).rev() {
        let mut sum = b[i];
        for j in i + 1..m {
            sum -= a[i * m + j] * x[j];
        }
        x[i] = sum / a[i * m + i];
    }
    Ok(x)
}

fn check_inputs(x: ArrayView1<'_, f64>, background: &BackgroundSet) -> Result<usize> {
    let d = x.len();
    if d == 0 {
        return Err(Error::invalid("cannot explain a zero-dimensional point"));
    }
    if background.dim() != d {
        return Err(Error::dim("shap background", d, background.dim()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("explained point contains non-finite values"));
    }
    Ok(d)
}

/// Exact Kernel SHAP: enumerates every coalition z ∈ {0,1}^d and solves the
/// weighted regression, which recovers the exact Shapley values of the
/// coalition value function.
pub fn explain_exact(
    model: &dyn Predictor,
    x: ArrayView1<'_, f64>,
    background: &BackgroundSet,
) -> Result<ShapExplanation> {
    let d = check_inputs(x, background)?;
    if d > EXACT_DIM_LIMIT {
        return Err(Error::invalid(format!(
            "exact enumeration is limited to d <= {EXACT_DIM_LIMIT}; use explain_sampled"
        )));
    }
    let full = (1u64 << d) - 1;
    let mut masks = Vec::with_capacity((1usize << d) - 2);
    let mut weights = Vec::with_capacity(masks.capacity());
    for mask in 1..full {
        masks.push(mask);
        weights.push(shapley_kernel_weight(d, mask.count_ones() as usize)?);
    }
    let mut all_masks = vec![0u64, full];
    all_masks.extend_from_slice(&masks);
    let values = coalition_values(model, x, background, &all_masks)?;
    let (v_empty, v_full) = (values[0], values[1]);
    let attributions = solve_attributions(d, &masks, &weights, &values[2..], v_empty, v_full)?;
    Ok(ShapExplanation {
        base_value: v_empty,
        attributions,
        explained_point: x.to_owned(),
        model_output: v_full,
    })
}

/// Lexicographic index combinations; used to enumerate whole coalition-size
/// layers without scanning all 2^d masks.
fn masks_of_size(d: usize, s: usize) -> Vec<u64> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        out.push(idx.iter().fold(0u64, |m, &j| m | 1 << j));
        // Advance the combination.
        let mut i = s;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + d - s {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Sampled Kernel SHAP. Whole coalition-size layers are enumerated exactly
/// while the budget allows (paired with their complements); the remainder is
/// sampled proportionally to the kernel weight, also in complement pairs.
/// With the budget covering all 2^d coalitions this reduces to
/// [`explain_exact`].
pub fn explain_sampled(
    model: &dyn Predictor,
    x: ArrayView1<'_, f64>,
    background: &BackgroundSet,
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    let d = check_inputs(x, background)?;
    if d > 63 {
        return Err(Error::invalid("sampled shap supports at most 63 features"));
    }
    if n_coalitions < 2 * d + 2 {
        return Err(Error::invalid(format!(
            "n_coalitions must be at least 2d + 2 = {}",
            2 * d + 2
        )));
    }
    if d == 1 {
        let values = coalition_values(model, x, background, &[0, 1])?;
        return Ok(ShapExplanation {
            base_value: values[0],
            attributions: ndarray::array![values[1] - values[0]],
            explained_point: x.to_owned(),
            model_output: values[1],
        });
    }

    // The empty and full coalitions are always evaluated; they enter as
    // constraints.
    let mut budget = n_coalitions - 2;
    let mut masks: Vec<u64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut enumerated_mass = 0.0;
    let total_mass: f64 = (1..d)
        .map(|s| shapley_kernel_weight(d, s).expect("0 < s < d") * binomial(d, s))
        .sum();
    let mut remaining_sizes: Vec<usize> = Vec::new();

    let half = d / 2;
    for s in 1..=half {
        let paired = s != d - s;
        let layer = binomial(d, s) as usize;
        let group = if paired { 2 * layer } else { layer };
        if budget >= group {
            let w_s = shapley_kernel_weight(d, s)?;
            for mask in masks_of_size(d, s) {
                masks.push(mask);
                weights.push(w_s);
                if paired {
                    masks.push(!mask & ((1 << d) - 1));
                    weights.push(shapley_kernel_weight(d, d - s)?);
                }
            }
            enumerated_mass += w_s * layer as f64;
            if paired {
                enumerated_mass += shapley_kernel_weight(d, d - s)? * layer as f64;
            }
            budget -= group;
        } else {
            remaining_sizes.push(s);
            if paired {
                remaining_sizes.push(d - s);
            }
        }
    }
    remaining_sizes.sort_unstable();

    if !remaining_sizes.is_empty() && budget > 0 {
        // Size distribution ∝ layer kernel mass: p(s) ∝ 1/(s(d−s)).
        let size_weights: Vec<f64> = remaining_sizes
            .iter()
            .map(|&s| 1.0 / (s * (d - s)) as f64)
            .collect();
        let total_size_weight: f64 = size_weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
        let full = (1u64 << d) - 1;
        while budget > 0 {
            let mut pick = rand::Rng::random_range(&mut rng, 0.0..total_size_weight);
            let mut s = remaining_sizes[0];
            for (i, &sw) in size_weights.iter().enumerate() {
                if pick < sw {
                    s = remaining_sizes[i];
                    break;
                }
                pick -= sw;
            }
            let mask = rand::seq::index::sample(&mut rng, d, s)
                .iter()
                .fold(0u64, |m, j| m | 1 << j);
            *counts.entry(mask).or_insert(0.0) += 1.0;
            budget -= 1;
            if budget > 0 && remaining_sizes.contains(&(d - s)) {
                *counts.entry(!mask & full).or_insert(0.0) += 1.0;
                budget -= 1;
            }
        }
        let total_count: f64 = counts.values().sum();
        let sampled_mass = total_mass - enumerated_mass;
        for (mask, count) in counts {
            masks.push(mask);
            weights.push(sampled_mass * count / total_count);
        }
    }

    let full = (1u64 << d) - 1;
    let mut all_masks = vec![0u64, full];
    all_masks.extend_from_slice(&masks);
    let values = coalition_values(model, x, background, &all_masks)?;
    let (v_empty, v_full) = (values[0], values[1]);
    let attributions = solve_attributions(d, &masks, &weights, &values[2..], v_empty, v_full)?;
    Ok(ShapExplanation {
        base_value: v_empty,
        attributions,
        explained_point: x.to_owned(),
        model_output: v_full,
    })
}

/// Exact explanations for every row of an evaluation set.
pub fn explain_rows_exact(
    model: &dyn Predictor,
    rows: &Array2<f64>,
    background: &BackgroundSet,
    feature_names: Vec<String>,
) -> Result<ExplanationSet> {
    let explanations = rows
        .rows()
        .into_iter()
        .map(|row| explain_exact(model, row, background))
        .collect::<Result<Vec<_>>>()?;
    ExplanationSet::new(feature_names, explanations)
}

/// Root mean square difference over all (row, feature) attribution pairs.
pub fn shap_rmse(a: &ExplanationSet, b: &ExplanationSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("shap rmse features", a.dim(), b.dim()));
    }
    if a.len() != b.len() {
        return Err(Error::dim("shap rmse rows", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::invalid("shap rmse needs at least one explanation"));
    }
    let mut sum = 0.0;
    for (ea, eb) in a.explanations.iter().zip(&b.explanations) {
        for (pa, pb) in ea.attributions.iter().zip(eb.attributions.iter()) {
            sum += (pa - pb) * (pa - pb);
        }
    }
    Ok((sum / (a.len() * a.dim()) as f64).sqrt())
}

fn ranking_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "summary".into());
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}_ranking.{ext}"))
}

/// Writes the long-format summary CSV (row_id, feature, feature_value,
/// shap_value) plus a companion `<stem>_ranking.csv` ordering features by
/// mean |φ| descending. Returns the ranking path.
pub fn summary_export(set: &ExplanationSet, path: impl AsRef<Path>) -> Result<PathBuf> {
    if set.is_empty() {
        return Err(Error::invalid("cannot export an empty explanation set"));
    }
    let path = path.as_ref();
    let mut out = String::from("row_id,feature,feature_value,shap_value\n");
    for (r, e) in set.explanations.iter().enumerate() {
        for (j, name) in set.feature_names.iter().enumerate() {
            writeln!(
                out,
                "{r},{name},{},{}",
                e.explained_point[j], e.attributions[j]
            )
            .expect("string write");
        }
    }
    std::fs::write(path, out)?;

    let means = set.mean_abs_attributions();
    let mut order: Vec<usize> = (0..set.dim()).collect();
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap().then(a.cmp(&b)));
    let mut ranking = String::from("feature,mean_abs_shap\n");
    for &j in &order {
        writeln!(ranking, "{},{}", set.feature_names[j], means[j]).expect("string write");
    }
    let rank_path = ranking_path(path);
    std::fs::write(&rank_path, ranking)?;
    Ok(rank_path)
}
