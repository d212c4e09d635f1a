//! Label providers: synthetic analytic simulators for desk-scale validation
//! and a subprocess protocol for real external simulators.

use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::space::{FeatureSpec, ScenarioSpace};

/// A black-box label provider. `row_ids` identify rows within the caller's
/// design so that stochastic oracles can key their noise on row identity
/// rather than call order; batching then never changes a realization.
pub trait Oracle: Sync {
    fn kpi_names(&self) -> &[String];
    fn dim(&self) -> usize;
    /// Evaluates a batch; returns one column per KPI.
    fn eval(&self, points: &Array2<f64>, row_ids: &[u64]) -> Result<Array2<f64>>;
}

/// The six-feature scenario box used by the synthetic oracles
/// (fp, ph, cu, tt, mct, cr).
pub fn mercury6_space() -> ScenarioSpace {
    ScenarioSpace::new(vec![
        FeatureSpec::new("fuel_price", 0.0, 5.0, 1.0, "2014 euros per kg").unwrap(),
        FeatureSpec::new("planning_horizon", 100.0, 1000.0, 300.0, "nautical miles").unwrap(),
        FeatureSpec::new("cruise_uncertainty", 0.0, 10.0, 1.0, "-").unwrap(),
        FeatureSpec::new("turnaround_time", 0.0, 10.0, 1.0, "-").unwrap(),
        FeatureSpec::new("min_connecting_time", 0.0, 10.0, 1.0, "-").unwrap(),
        FeatureSpec::new("claim_rate", 0.0, 1.0, 0.14, "-").unwrap(),
    ])
    .expect("static space is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticId {
    Linear6,
    Interaction6,
    Mercury6,
}

pub const SYNTHETIC_IDS: [&str; 3] = ["linear6", "interaction6", "mercury6"];

impl std::str::FromStr for SyntheticId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear6" => Ok(SyntheticId::Linear6),
            "interaction6" => Ok(SyntheticId::Interaction6),
            "mercury6" => Ok(SyntheticId::Mercury6),
            other => Err(Error::invalid(format!(
                "unknown oracle id '{other}'; valid ids: {}",
                SYNTHETIC_IDS.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for SyntheticId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SyntheticId::Linear6 => "linear6",
            SyntheticId::Interaction6 => "interaction6",
            SyntheticId::Mercury6 => "mercury6",
        };
        f.write_str(s)
    }
}

/// Analytic stand-in simulators over the six-feature box. All are exact
/// deterministic functions plus Gaussian noise keyed on
/// (noise_seed, row id, kpi index).
///
/// The mercury6 coefficients are fabricated so that desk-scale experiments
/// exhibit the qualitative shapes that matter to the harness — a dominant
/// linear fuel-price effect, saturation of the absorbed delay around a 350 NM
/// planning horizon, and a turnaround×connecting-time interaction in the
/// passenger delay — while cruise uncertainty and claim rate carry zero
/// weight everywhere.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    id: SyntheticId,
    noise_seed: u64,
    noise_enabled: bool,
    kpi_names: Vec<String>,
    kpi_sigmas: Vec<f64>,
    space: ScenarioSpace,
}

impl SyntheticOracle {
    pub fn new(id: SyntheticId, noise_seed: u64) -> Self {
        let (kpi_names, kpi_sigmas): (Vec<&str>, Vec<f64>) = match id {
            SyntheticId::Mercury6 => (
                vec![
                    "fuel_cost",
                    "pad",
                    "pax_delay",
                    "holding",
                    "arr_delay",
                    "dep_delay",
                ],
                vec![300.0, 0.10, 45.0, 0.15, 4.0, 4.0],
            ),
            SyntheticId::Linear6 => (vec!["y"], vec![1.0]),
            SyntheticId::Interaction6 => (vec!["y"], vec![0.5]),
        };
        SyntheticOracle {
            id,
            noise_seed,
            noise_enabled: true,
            kpi_names: kpi_names.into_iter().map(String::from).collect(),
            kpi_sigmas,
            space: mercury6_space(),
        }
    }

    /// Same oracle with the noise terms switched off.
    pub fn noiseless(id: SyntheticId) -> Self {
        let mut oracle = Self::new(id, 0);
        oracle.noise_enabled = false;
        oracle
    }

    pub fn id(&self) -> SyntheticId {
        self.id
    }

    pub fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    pub fn kpi_sigma(&self, kpi: &str) -> Option<f64> {
        self.kpi_names
            .iter()
            .position(|n| n == kpi)
            .map(|i| self.kpi_sigmas[i])
    }

    fn noiseless_row(&self, x: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
        let (fp, ph, tt, mct) = (x[0], x[1], x[3], x[4]);
        match self.id {
            SyntheticId::Mercury6 => {
                let fuel_cost = 26401.0 + 16000.0 * (fp - 2.5);
                let pad = 0.6 * ph.min(350.0) / 350.0;
                let pax_delay =
                    200.0 + 800.0 * (1.0 - (-(0.25 * tt + 0.20 * mct + 0.05 * tt * mct)).exp());
                let holding = 0.5 + 0.04 * fp * (1.0 - tt / 20.0) - 0.02 * tt;
                let arr_delay = 30.0 + 35.0 * tt;
                let dep_delay = 28.0 + 35.0 * tt;
                vec![fuel_cost, pad, pax_delay, holding, arr_delay, dep_delay]
            }
            SyntheticId::Linear6 => {
                let w = [1.0, 0.01, 0.0, 5.0, 3.0, 0.0];
                let y = 10.0 + (0..6).map(|j| w[j] * x[j]).sum::<f64>();
                vec![y]
            }
            SyntheticId::Interaction6 => vec![10.0 * tt * mct],
        }
    }
}

impl Oracle for SyntheticOracle {
    fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn eval(&self, points: &Array2<f64>, row_ids: &[u64]) -> Result<Array2<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::dim("synthetic oracle inputs", self.dim(), points.ncols()));
        }
        if points.nrows() != row_ids.len() {
            return Err(Error::dim(
                "synthetic oracle row ids",
                points.nrows(),
                row_ids.len(),
            ));
        }
        for (i, row) in points.rows().into_iter().enumerate() {
            if !self.space.contains(row) {
                return Err(Error::oracle(format!(
                    "input row {i} lies outside the practical ranges"
                )));
            }
        }
        let mut out = Array2::zeros((points.nrows(), self.kpi_names.len()));
        for (i, row) in points.rows().into_iter().enumerate() {
            let values = self.noiseless_row(row);
            for (k, &v) in values.iter().enumerate() {
                let eps = if self.noise_enabled {
                    self.kpi_sigmas[k] * noise_draw(self.noise_seed, row_ids[i], k as u64)
                } else {
                    0.0
                };
                out[[i, k]] = v + eps;
            }
        }
        Ok(out)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives independent sub-seeds; used for noise keys and per-stage RNGs.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Counter-based standard-normal draw keyed on (seed, row, kpi).
fn noise_draw(seed: u64, row: u64, kpi: u64) -> f64 {
    let key = splitmix64(seed ^ splitmix64(row ^ splitmix64(kpi.wrapping_add(0x6A09_E667))));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    StandardNormal.sample(&mut rng)
}

/// Closure-backed oracle for tests and custom setups.
pub struct FnOracle<F> {
    kpi_names: Vec<String>,
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&Array2<f64>) -> Array2<f64> + Sync,
{
    pub fn new(kpi_names: Vec<String>, dim: usize, f: F) -> Self {
        FnOracle { kpi_names, dim, f }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&Array2<f64>) -> Array2<f64> + Sync,
{
    fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, points: &Array2<f64>, _row_ids: &[u64]) -> Result<Array2<f64>> {
        let out = (self.f)(points);
        if out.nrows() != points.nrows() || out.ncols() != self.kpi_names.len() {
            return Err(Error::oracle("fn oracle returned a mismatched shape"));
        }
        Ok(out)
    }
}

/// External simulator driven over a child-process CSV protocol: the batch is
/// written as CSV (header = feature names) to the child's standard input and
/// the KPI table (header = declared KPI names) is read from its standard
/// output. One process is spawned per batch.
pub struct ExternalOracle {
    command: String,
    timeout: Duration,
    kpi_names: Vec<String>,
    feature_names: Vec<String>,
    batch_lock: Mutex<()>,
}

impl ExternalOracle {
    pub fn new(
        command: impl Into<String>,
        feature_names: Vec<String>,
        kpi_names: Vec<String>,
        timeout: Duration,
    ) -> Result<Self> {
        let command = command.into();
        if command.trim().is_empty() {
            return Err(Error::invalid("external oracle command must be nonempty"));
        }
        if kpi_names.is_empty() {
            return Err(Error::invalid("external oracle needs at least one kpi name"));
        }
        Ok(ExternalOracle {
            command,
            timeout,
            kpi_names,
            feature_names,
            batch_lock: Mutex::new(()),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn run_batch(&self, input_csv: &str) -> Result<String> {
        let _guard = self.batch_lock.lock().expect("oracle lock poisoned");
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::oracle(format!("failed to spawn '{}': {e}", self.command)))?;

        let mut stdin = child.stdin.take().expect("stdin piped");
        let payload = input_csv.as_bytes().to_vec();
        let writer = std::thread::spawn(move || {
            // The child may exit without draining stdin; a broken pipe here
            // surfaces later as its exit status.
            let _ = stdin.write_all(&payload);
        });

        let pid = child.id() as i32;
        let (done_tx, done_rx) = mpsc::channel::<()>();
        let timeout = self.timeout;
        let watchdog = std::thread::spawn(move || {
            if done_rx.recv_timeout(timeout).is_err() {
                unsafe {
                    libc::kill(pid, libc::SIGKILL);
                }
                return true;
            }
            false
        });

        let output = child.wait_with_output();
        let _ = done_tx.send(());
        let timed_out = watchdog.join().unwrap_or(false);
        writer.join().ok();
        let output = output.map_err(|e| Error::oracle(format!("wait failed: {e}")))?;

        if timed_out {
            return Err(Error::oracle(format!(
                "oracle command timed out after {:?}",
                self.timeout
            )));
        }
        let stderr_text = String::from_utf8_lossy(&output.stderr).trim().to_string();
        if !output.status.success() {
            return Err(Error::Oracle {
                message: format!("oracle command exited with {}", output.status),
                stderr: (!stderr_text.is_empty()).then_some(stderr_text),
            });
        }
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }
}

impl Oracle for ExternalOracle {
    fn kpi_names(&self) -> &[String] {
        &self.kpi_names
    }

    fn dim(&self) -> usize {
        self.feature_names.len()
    }

    fn eval(&self, points: &Array2<f64>, _row_ids: &[u64]) -> Result<Array2<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::dim("external oracle inputs", self.dim(), points.ncols()));
        }
        let mut input_csv = self.feature_names.join(",");
        input_csv.push('\n');
        for row in points.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            input_csv.push_str(&cells.join(","));
            input_csv.push('\n');
        }

        let stdout = self.run_batch(&input_csv)?;
        let (header, _, rows) =
            crate::dataset::parse_csv(Path::new("<oracle stdout>"), &stdout, None).map_err(
                |e| Error::Oracle {
                    message: format!("invalid oracle output: {e}"),
                    stderr: None,
                },
            )?;
        if header != self.kpi_names {
            return Err(Error::oracle(format!(
                "oracle output header [{}] does not match declared kpis [{}]",
                header.join(", "),
                self.kpi_names.join(", ")
            )));
        }
        if rows.len() != points.nrows() {
            return Err(Error::oracle(format!(
                "oracle returned {} rows for {} inputs",
                rows.len(),
                points.nrows()
            )));
        }
        let mut out = Array2::zeros((rows.len(), self.kpi_names.len()));
        for (i, row) in rows.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                out[[i, k]] = v;
            }
        }
        Ok(out)
    }
}

/// Counts rows labeled through it; used for call accounting in experiments.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    rows: std::sync::atomic::AtomicU64,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        CountingOracle {
            inner,
            rows: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn rows_labeled(&self) -> u64 {
        self.rows.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl Oracle for CountingOracle<'_> {
    fn kpi_names(&self) -> &[String] {
        self.inner.kpi_names()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, points: &Array2<f64>, row_ids: &[u64]) -> Result<Array2<f64>> {
        let out = self.inner.eval(points, row_ids)?;
        self.rows
            .fetch_add(points.nrows() as u64, std::sync::atomic::Ordering::Relaxed);
        Ok(out)
    }
}

/// Convenience for single-column oracles.
pub fn eval_single_kpi(
    oracle: &dyn Oracle,
    kpi: &str,
    points: &Array2<f64>,
    row_ids: &[u64],
) -> Result<Array1<f64>> {
    let k = oracle
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
    Ok(oracle.eval(points, row_ids)?.column(k).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn defaults_with(fp: f64, ph: f64, tt: f64, mct: f64) -> Array2<f64> {
        array![[fp, ph, 1.0, tt, mct, 0.14]]
    }

    #[test]
    fn mercury6_center_values_match_formulas() {
        let oracle = SyntheticOracle::noiseless(SyntheticId::Mercury6);
        let out = oracle.eval(&defaults_with(2.5, 300.0, 0.0, 0.0), &[0]).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 26401.0, epsilon = 1e-9); // fuel_cost at fp = 2.5
        assert_abs_diff_eq!(out[[0, 2]], 200.0, epsilon = 1e-9); // pax_delay at tt = mct = 0
        assert_abs_diff_eq!(out[[0, 4]], 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out[[0, 5]], 28.0, epsilon = 1e-9);
    }

    #[test]
    fn pad_saturates_at_350nm() {
        let oracle = SyntheticOracle::noiseless(SyntheticId::Mercury6);
        let a = oracle.eval(&defaults_with(1.0, 350.0, 1.0, 1.0), &[0]).unwrap();
        let b = oracle.eval(&defaults_with(1.0, 1000.0, 1.0, 1.0), &[1]).unwrap();
        assert_abs_diff_eq!(a[[0, 1]], b[[0, 1]], epsilon = 1e-12);
        assert_abs_diff_eq!(a[[0, 1]], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn inactive_features_have_no_effect() {
        let linear = SyntheticOracle::noiseless(SyntheticId::Linear6);
        let base = array![[1.0, 300.0, 0.0, 2.0, 3.0, 0.0]];
        let moved = array![[1.0, 300.0, 9.0, 2.0, 3.0, 1.0]];
        let a = linear.eval(&base, &[0]).unwrap();
        let b = linear.eval(&moved, &[1]).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], b[[0, 0]], epsilon = 1e-12);
        // And the interaction oracle is the plain product term.
        let inter = SyntheticOracle::noiseless(SyntheticId::Interaction6);
        let v = inter.eval(&defaults_with(1.0, 300.0, 2.0, 3.0), &[0]).unwrap();
        assert_abs_diff_eq!(v[[0, 0]], 60.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        let oracle = SyntheticOracle::noiseless(SyntheticId::Mercury6);
        assert!(oracle.eval(&defaults_with(6.0, 300.0, 1.0, 1.0), &[0]).is_err());
        assert!(oracle.eval(&array![[1.0, 300.0]], &[0]).is_err());
    }

    #[test]
    fn noise_is_keyed_on_row_identity_not_batch_order() {
        let oracle = SyntheticOracle::new(SyntheticId::Mercury6, 42);
        let points = array![
            [1.0, 300.0, 1.0, 1.0, 1.0, 0.14],
            [2.0, 500.0, 2.0, 2.0, 2.0, 0.5]
        ];
        let both = oracle.eval(&points, &[7, 9]).unwrap();
        let first = oracle
            .eval(&points.slice(ndarray::s![0..1, ..]).to_owned(), &[7])
            .unwrap();
        let second = oracle
            .eval(&points.slice(ndarray::s![1..2, ..]).to_owned(), &[9])
            .unwrap();
        for k in 0..6 {
            assert_eq!(both[[0, k]], first[[0, k]]);
            assert_eq!(both[[1, k]], second[[0, k]]);
        }
        // A different row id gives a different realization.
        let other = oracle
            .eval(&points.slice(ndarray::s![0..1, ..]).to_owned(), &[8])
            .unwrap();
        assert_ne!(other[[0, 0]], first[[0, 0]]);
    }

    #[test]
    fn empirical_noise_std_matches_declared_sigma() {
        let oracle = SyntheticOracle::new(SyntheticId::Mercury6, 3);
        let clean = SyntheticOracle::noiseless(SyntheticId::Mercury6);
        let n = 10_000;
        let points = Array2::from_shape_fn((n, 6), |(_, j)| {
            [1.0, 300.0, 1.0, 2.0, 3.0, 0.14][j]
        });
        let ids: Vec<u64> = (0..n as u64).collect();
        let noisy = oracle.eval(&points, &ids).unwrap();
        let base = clean.eval(&points, &ids).unwrap();
        for (k, sigma) in [300.0, 0.10, 45.0, 0.15, 4.0, 4.0].iter().enumerate() {
            let eps: Vec<f64> = (0..n).map(|i| noisy[[i, k]] - base[[i, k]]).collect();
            let mean = eps.iter().sum::<f64>() / n as f64;
            let std =
                (eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(
                (std - sigma).abs() / sigma < 0.05,
                "kpi {k}: empirical std {std} vs declared {sigma}"
            );
        }
    }

    #[test]
    fn external_oracle_round_trips_a_cat_like_command() {
        // `sed` renames the header; the numbers pass through bit-identically.
        let oracle = ExternalOracle::new(
            "sed '1s/.*/k1,k2/'",
            vec!["a".into(), "b".into()],
            vec!["k1".into(), "k2".into()],
            Duration::from_secs(10),
        )
        .unwrap();
        let points = array![[0.1234567890123456, -7.25], [1e-9, 3.5e11]];
        let out = oracle.eval(&points, &[0, 1]).unwrap();
        assert_eq!(out, points);
    }

    #[test]
    fn external_oracle_identity_on_first_feature() {
        let oracle = ExternalOracle::new(
            "awk -F, 'NR==1 {print \"y\"} NR>1 {print $1}'",
            vec!["x1".into(), "x2".into()],
            vec!["y".into()],
            Duration::from_secs(10),
        )
        .unwrap();
        let points = array![[1.5, 0.0], [2.5, 9.0], [-3.0, 1.0]];
        let out = oracle.eval(&points, &[0, 1, 2]).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![1.5, 2.5, -3.0]);
    }

    #[test]
    fn external_oracle_failure_carries_stderr() {
        let oracle = ExternalOracle::new(
            "echo boom >&2; exit 3",
            vec!["a".into()],
            vec!["y".into()],
            Duration::from_secs(10),
        )
        .unwrap();
        let err = oracle.eval(&array![[1.0]], &[0]).unwrap_err();
        match err {
            Error::Oracle { stderr, .. } => assert_eq!(stderr.as_deref(), Some("boom")),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn external_oracle_detects_row_count_mismatch() {
        let oracle = ExternalOracle::new(
            "printf 'y\\n1\\n2\\n'",
            vec!["a".into()],
            vec!["y".into()],
            Duration::from_secs(10),
        )
        .unwrap();
        let err = oracle.eval(&array![[1.0], [2.0], [3.0]], &[0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("2 rows for 3 inputs"), "{err}");
    }

    #[test]
    fn external_oracle_times_out() {
        let oracle = ExternalOracle::new(
            "sleep 30",
            vec!["a".into()],
            vec!["y".into()],
            Duration::from_millis(200),
        )
        .unwrap();
        let err = oracle.eval(&array![[1.0]], &[0]).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }

    #[test]
    fn counting_oracle_tracks_labeled_rows() {
        let oracle = SyntheticOracle::noiseless(SyntheticId::Linear6);
        let counting = CountingOracle::new(&oracle);
        counting
            .eval(&defaults_with(1.0, 300.0, 1.0, 1.0), &[0])
            .unwrap();
        counting
            .eval(
                &array![
                    [1.0, 300.0, 1.0, 1.0, 1.0, 0.14],
                    [2.0, 500.0, 2.0, 2.0, 2.0, 0.5]
                ],
                &[1, 2],
            )
            .unwrap();
        assert_eq!(counting.rows_labeled(), 3);
    }
}
