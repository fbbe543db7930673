//! Experiment configs, runners and on-disk result bundles.

pub mod data;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::circuit::{sample_outputs, zz_feature_map, EnsembleOptions, FeatureMapOptions, ObservableSet, RandomCircuit};
use crate::error::{Error, Result};
use crate::gp::{gp_posterior, ObservedSet};
use crate::haar::{haar_expectation, monte_carlo_moments, MomentSpec};
use crate::linalg::{set_tolerances, tolerances, DensityMatrix, RMatrix, RVector, Tolerances};
use crate::near_gaussian::{excess_kurtosis, gaussianity_diagnostics};
use crate::qntk::{gradient_descent_train, linearized_dynamics, qntk, theta_star, LinearizedOptions};
use crate::rng::{child_seed, substream};
use crate::stats::{median, MomentEstimate};

pub use data::{
    ingest_csv, ingest_csv_reader, pca_reduce, read_output_table, synthetic_dataset, CsvSchema, FeatureTable, Pca,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Output samples of the random ensemble and their Gaussianity report.
    Gaussianity,
    /// Analytic Haar moments against the Monte Carlo oracle.
    Moments,
    /// Gradient-descent training against the frozen-kernel prediction.
    Dynamics,
    /// Kurtosis over a grid of qubit counts and depths.
    Sweep,
}

/// Where feature vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_synthetic_rows")]
        rows: usize,
        #[serde(default = "default_synthetic_features")]
        features: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
    },
}

fn default_synthetic_rows() -> usize {
    64
}
fn default_synthetic_features() -> usize {
    8
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic {
            rows: default_synthetic_rows(),
            features: default_synthetic_features(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSettings {
    pub eta: f64,
    pub steps: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        Self {
            eta: 0.01,
            steps: 100,
            n_train: 2,
            n_test: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub n_qubits: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            n_qubits: vec![2, 4],
            layers: vec![2, 8, 32],
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_qubits: usize,
    /// Circuit depth `L`.
    pub layers: usize,
    /// Monte Carlo / ensemble sample count `N`.
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Pauli strings; empty means the kind's default set.
    #[serde(default)]
    pub observables: Vec<String>,
    /// Number of data states fed to the ensemble.
    #[serde(default = "one")]
    pub n_states: usize,
    #[serde(default)]
    pub feature_map: FeatureMapOptions,
    /// Correlators per order for `moments`.
    #[serde(default = "three")]
    pub specs_per_order: usize,
    #[serde(default)]
    pub dynamics: DynamicsSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let dense_limit = self.tolerances.max_dim;
        let check_n = |n: usize| -> Result<()> {
            if n == 0 || n >= usize::BITS as usize || (1usize << n) > dense_limit {
                return Err(Error::Config(format!(
                    "n_qubits = {n} outside 1..=log2(max_dim = {dense_limit})"
                )));
            }
            Ok(())
        };
        if self.kind == ExperimentKind::Sweep {
            if self.sweep.n_qubits.is_empty() || self.sweep.layers.is_empty() {
                return cfg("sweep grid is empty".into());
            }
            for &n in &self.sweep.n_qubits {
                check_n(n)?;
            }
            if self.sweep.layers.contains(&0) {
                return cfg("layers must be positive".into());
            }
        } else {
            check_n(self.n_qubits)?;
        }
        if self.layers == 0 {
            return cfg("layers must be positive".into());
        }
        if self.n_states == 0 {
            return cfg("n_states must be positive".into());
        }
        let min_samples = match self.kind {
            ExperimentKind::Gaussianity | ExperimentKind::Sweep => crate::near_gaussian::MIN_DIAGNOSTIC_SAMPLES,
            ExperimentKind::Moments => 100,
            ExperimentKind::Dynamics => 0,
        };
        if self.samples < min_samples {
            return cfg(format!("samples = {} below the minimum {min_samples}", self.samples));
        }
        if self.kind == ExperimentKind::Dynamics {
            let d = &self.dynamics;
            if !(d.eta > 0.0 && d.eta.is_finite()) || d.n_train == 0 {
                return cfg("dynamics needs eta > 0 and n_train >= 1".into());
            }
        }
        if let Some(bad) = self.observables.iter().find(|o| o.len() != self.n_qubits && self.kind != ExperimentKind::Sweep) {
            return cfg(format!("observable {bad:?} does not act on {} qubits", self.n_qubits));
        }
        let t = self.tolerances;
        if [t.construction, t.unitarity, t.psd].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return cfg("tolerances must be positive".into());
        }
        Ok(())
    }

    fn observables_for(&self, n: usize) -> Result<ObservableSet> {
        let labels: Vec<String> = if self.observables.is_empty() || self.kind == ExperimentKind::Sweep {
            default_observables(n)
        } else {
            self.observables.clone()
        };
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        ObservableSet::paulis(&refs).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `Z` on qubits 0 and 1 and `ZZ` on the pair (single `Z` when `n = 1`).
pub fn default_observables(n: usize) -> Vec<String> {
    let string = |on: &[usize]| (0..n).map(|k| if on.contains(&k) { 'Z' } else { 'I' }).collect::<String>();
    if n == 1 {
        vec![string(&[0])]
    } else {
        vec![string(&[0]), string(&[1]), string(&[0, 1])]
    }
}

/// A named pass/fail outcome recorded in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Output of one run. `metrics` and `checks` depend only on the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    pub metrics: Value,
    pub checks: Vec<Check>,
    pub wall_clock_seconds: f64,
    pub library_version: String,
    /// CSV tables keyed by file name; written next to the JSON files.
    #[serde(skip)]
    pub tables: BTreeMap<String, String>,
}

impl ResultBundle {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// The deterministic part: config, metrics and checks.
    pub fn metrics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&json!({
            "config": self.config,
            "metrics": self.metrics,
            "checks": self.checks,
        }))?)
    }

    /// Write `dir/{metrics.json, bundle.json, *.csv}` via a sibling temporary
    /// directory renamed into place, so `dir` never holds a partial bundle.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        if dir.exists() {
            let is_bundle = dir.join("bundle.json").exists() || dir.join("error.json").exists();
            let empty = std::fs::read_dir(dir)?.next().is_none();
            if !is_bundle && !empty {
                return Err(Error::Config(format!(
                    "{} exists and is not a result bundle",
                    dir.display()
                )));
            }
        }
        let name = dir.file_name().map_or("bundle".into(), |n| n.to_string_lossy().into_owned());
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        let write_all = || -> Result<()> {
            std::fs::write(tmp.join("metrics.json"), self.metrics_json()?)?;
            std::fs::write(tmp.join("bundle.json"), serde_json::to_string_pretty(self)?)?;
            for (file, body) in &self.tables {
                std::fs::write(tmp.join(file), body)?;
            }
            Ok(())
        };
        if let Err(e) = write_all() {
            let _ = std::fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::rename(&tmp, dir)?;
        Ok(())
    }
}

/// Record a failed run as `dir/error.json`, replacing any previous content of
/// a bundle directory.
pub fn write_error_manifest(dir: &Path, config: Option<&ExperimentConfig>, err: &Error) -> Result<()> {
    let manifest = json!({
        "config": config,
        "error": err.to_string(),
        "exit_code": err.exit_code(),
        "library_version": env!("CARGO_PKG_VERSION"),
    });
    if dir.join("bundle.json").exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("error.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Feature vectors for the config's data source, reduced to `k` angles.
pub fn load_features(config: &ExperimentConfig, k: usize) -> Result<FeatureTable> {
    let table = match &config.data {
        DataSource::Synthetic { rows, features } => synthetic_dataset(*rows, *features, child_seed(config.seed, "data", 0))?,
        DataSource::Csv { path, label_column } => ingest_csv(
            path,
            &CsvSchema {
                required: Vec::new(),
                label_column: label_column.clone(),
            },
        )?,
    };
    if table.n_features() < k {
        return Err(Error::Config(format!(
            "data has {} features, need at least {k}",
            table.n_features()
        )));
    }
    pca_reduce(&table, k)
}

/// Feature-map states for the first `count` rows.
pub fn encode_states(table: &FeatureTable, n_qubits: usize, count: usize, opts: FeatureMapOptions) -> Result<Vec<DensityMatrix>> {
    if table.n_rows() < count {
        return Err(Error::Config(format!(
            "need {count} data rows, have {}",
            table.n_rows()
        )));
    }
    table.rows[..count]
        .iter()
        .map(|x| zz_feature_map(x, n_qubits, opts))
        .collect()
}

/// Run an experiment, applying its tolerances for the duration of the call.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle> {
    config.validate()?;
    let saved = tolerances();
    set_tolerances(config.tolerances);
    let start = Instant::now();
    let out = match config.kind {
        ExperimentKind::Gaussianity => run_gaussianity(config),
        ExperimentKind::Moments => run_moments(config),
        ExperimentKind::Dynamics => run_dynamics(config),
        ExperimentKind::Sweep => run_sweep(config),
    };
    set_tolerances(saved);
    let (metrics, checks, tables) = out?;
    Ok(ResultBundle {
        config: config.clone(),
        metrics,
        checks,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        tables,
    })
}

type RunOutput = (Value, Vec<Check>, BTreeMap<String, String>);

fn run_gaussianity(config: &ExperimentConfig) -> Result<RunOutput> {
    let n = config.n_qubits;
    let obs = config.observables_for(n)?;
    let table = load_features(config, n)?;
    let states = encode_states(&table, n, config.n_states, config.feature_map)?;
    let outputs = sample_outputs(
        EnsembleOptions {
            n_qubits: n,
            depth: config.layers,
        },
        &states,
        &obs,
        config.samples,
        config.seed,
    )?;
    let columns: Vec<Vec<f64>> = (0..outputs.labels.len()).map(|c| outputs.column(c)).collect();
    let report = gaussianity_diagnostics(&outputs.labels, &columns)?;
    let complete = report.kurtosis.len() == outputs.labels.len();
    let mut csv = Vec::new();
    outputs.write_csv(&mut csv)?;
    let mut tables = BTreeMap::new();
    tables.insert("samples.csv".to_string(), String::from_utf8(csv).expect("csv is utf-8"));
    Ok((
        json!({ "report": report }),
        vec![Check {
            name: "kurtosis-per-observable".into(),
            passed: complete,
            detail: format!("{} of {} columns", report.kurtosis.len(), outputs.labels.len()),
        }],
        tables,
    ))
}

fn run_moments(config: &ExperimentConfig) -> Result<RunOutput> {
    let n = config.n_qubits;
    let obs = config.observables_for(n)?;
    let table = load_features(config, n)?;
    let states = encode_states(&table, n, config.n_states, config.feature_map)?;
    let mut rng = substream(config.seed, "moment-specs", 0);
    let mut specs = Vec::new();
    for p in 1..=4 {
        for _ in 0..config.specs_per_order {
            let pairs = (0..p)
                .map(|_| {
                    (
                        states[rng.random_range(0..states.len())].clone(),
                        obs.as_slice()[rng.random_range(0..obs.len())].clone(),
                    )
                })
                .collect();
            specs.push(MomentSpec::new(pairs)?);
        }
    }
    let mc = monte_carlo_moments(&specs, config.samples, child_seed(config.seed, "moments-mc", 0), None)?;
    let mut rows = Vec::new();
    let mut max_z: f64 = 0.0;
    for (spec, est) in specs.iter().zip(&mc) {
        let exact = haar_expectation(spec)?;
        let z = est.z_score(exact);
        max_z = max_z.max(z);
        rows.push(json!({
            "spec_hash": spec.spec_hash(),
            "order": spec.order(),
            "analytic": exact,
            "mc_value": est.value,
            "mc_se": est.std_error,
            "n": est.n_samples,
            "z_score": z,
        }));
    }
    Ok((
        json!({ "correlators": rows, "max_z_score": max_z }),
        vec![Check {
            name: "analytic-vs-monte-carlo".into(),
            passed: max_z < 4.0,
            detail: format!("max z = {max_z:.3} (< 4 required)"),
        }],
        BTreeMap::new(),
    ))
}

/// Summary of one training run against its frozen-kernel prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Median over steps of `‖f_GD - f_lin‖ / ‖f_lin‖` on the training points.
    pub median_relative_deviation: f64,
    /// `max |GP mean - linearized t=∞ mean|` on the test points.
    pub bridge_max_abs_diff: f64,
    /// `max |f_lin(θ*) - y|` for the one-shot update.
    pub theta_star_residual: f64,
}

/// Train a random circuit on `n_train` feature-map states and compare with
/// the frozen-kernel dynamics; the remaining `n_test` states are predicted.
pub fn dynamics_run(
    n_qubits: usize,
    layers: usize,
    states: &[DensityMatrix],
    labels: &[f64],
    settings: &DynamicsSettings,
    obs: &ObservableSet,
    seed: u64,
) -> Result<(DynamicsSummary, String)> {
    let (nt, ne) = (settings.n_train, settings.n_test);
    if states.len() != nt + ne || labels.len() != nt {
        return Err(Error::DimensionMismatch {
            expected: nt + ne,
            got: states.len(),
        });
    }
    let mut rng = substream(seed, "dynamics-circuit", 0);
    let rc = RandomCircuit::sample(n_qubits, layers, &mut rng)?;
    let n_out = obs.len();
    let y = RMatrix::from_fn(n_out, nt, |_, b| labels[b]);
    let observed = ObservedSet::new(states[..nt].to_vec(), y.clone())?;
    let traj = gradient_descent_train(&rc, &rc.theta, &observed, obs, settings.eta, settings.steps)?;
    let q_all = qntk(&rc, &rc.theta, states, obs)?;
    let np = nt + ne;
    let f0_all = crate::qntk::flat_outputs(
        &rc,
        &rc.theta,
        &states.iter().map(crate::circuit::SpectralState::new).collect::<Vec<_>>(),
        obs,
    )?;
    let y_flat = RVector::from_iterator(n_out * nt, y.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
    let opts = LinearizedOptions::new(settings.eta);
    let train_rows: Vec<usize> = (0..n_out).flat_map(|i| (0..nt).map(move |a| i * np + a)).collect();
    let mut devs = Vec::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "loss".to_string()];
    header.extend((0..n_out * nt).map(|k| format!("f{k}")));
    header.extend((0..n_out * nt).map(|k| format!("linearized_f{k}")));
    csv.write_record(&header)?;
    for (t, f) in traj.f.iter().enumerate() {
        let lin = linearized_dynamics(&q_all, nt, &f0_all, &y_flat, t as f64, &opts)?;
        let lin_train: Vec<f64> = train_rows.iter().map(|&r| lin.f[r]).collect();
        if t > 0 {
            let diff: f64 = f.iter().zip(&lin_train).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = lin_train.iter().map(|v| v * v).sum::<f64>().sqrt();
            devs.push(diff / norm);
        }
        let mut rec = vec![t.to_string(), format!("{:.17e}", traj.loss[t])];
        rec.extend(f.iter().map(|v| format!("{v:.17e}")));
        rec.extend(lin_train.iter().map(|v| format!("{v:.17e}")));
        csv.write_record(&rec)?;
    }
    let lin_inf = linearized_dynamics(&q_all, nt, &f0_all, &y_flat, f64::INFINITY, &opts)?;
    let kernel = q_all.to_kernel()?;
    let post = gp_posterior(&kernel, &y, nt, Some(lin_inf.jitter))?;
    let mut bridge: f64 = 0.0;
    for i in 0..n_out {
        for a in 0..ne {
            bridge = bridge.max((post.mean[(i, a)] - lin_inf.mean[i * np + nt + a]).abs());
        }
    }
    let grad = crate::qntk::parameter_shift_gradient(&rc, &rc.theta, &states[..nt], obs, crate::qntk::GradientMethod::Auto)?;
    let f0_train = RVector::from_vec(traj.f[0].clone());
    let star = theta_star(&rc.theta, &grad.jacobian, &f0_train, &y_flat, settings.eta)?;
    let delta = RVector::from_iterator(star.len(), star.iter().zip(&rc.theta).map(|(a, b)| a - b));
    let lin_at_star = &f0_train + &grad.jacobian * delta;
    let star_res = (lin_at_star - &y_flat).amax();
    let body = String::from_utf8(csv.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8");
    Ok((
        DynamicsSummary {
            initial_loss: traj.loss[0],
            final_loss: *traj.loss.last().expect("trajectory has step 0"),
            median_relative_deviation: if devs.is_empty() { 0.0 } else { median(&devs) },
            bridge_max_abs_diff: bridge,
            theta_star_residual: star_res,
        },
        body,
    ))
}

fn run_dynamics(config: &ExperimentConfig) -> Result<RunOutput> {
    let n = config.n_qubits;
    let settings = &config.dynamics;
    let obs = config.observables_for(n)?;
    let obs = ObservableSet::new(vec![obs.as_slice()[0].clone()])?;
    let table = load_features(config, n)?;
    let states = encode_states(&table, n, settings.n_train + settings.n_test, config.feature_map)?;
    let labels: Vec<f64> = match &table.labels {
        Some(l) => l[..settings.n_train].iter().map(|v| 0.5 * v.signum()).collect(),
        None => {
            let mut rng = substream(config.seed, "labels", 0);
            (0..settings.n_train).map(|_| rng.random_range(-0.5..0.5)).collect()
        }
    };
    let (summary, csv) = dynamics_run(n, config.layers, &states, &labels, settings, &obs, config.seed)?;
    let mut tables = BTreeMap::new();
    tables.insert("trajectory.csv".to_string(), csv);
    let checks = vec![
        Check {
            name: "gp-kernel-regression-bridge".into(),
            passed: summary.bridge_max_abs_diff < 1e-10,
            detail: format!("max |Δ| = {:.3e} (< 1e-10 required)", summary.bridge_max_abs_diff),
        },
        Check {
            name: "theta-star-interpolates".into(),
            passed: summary.theta_star_residual < 1e-8,
            detail: format!("max |f_lin(θ*) - y| = {:.3e}", summary.theta_star_residual),
        },
    ];
    Ok((json!({ "summary": summary }), checks, tables))
}

/// One cell of a kurtosis sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_qubits: usize,
    pub layers: usize,
    pub labels: Vec<String>,
    pub kurtosis: Vec<MomentEstimate>,
}

/// Result of the monotonicity test along both grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Per observable, the list of `(from, to, |k| from, |k| to, combined SE)`
    /// comparisons where `|k|` increased.
    pub inversions: Vec<Vec<String>>,
    /// At most one inversion per observable, within 2 combined SE.
    pub passed: bool,
}

/// `|excess kurtosis|` must not grow along increasing `n` (fixed `L`) or
/// increasing `L` (fixed `n`); one inversion within 2 SE is tolerated per
/// observable. Cells must be indexed `[n index][L index]`.
pub fn check_monotone(grid: &[Vec<SweepCell>]) -> MonotonicityReport {
    let n_obs = grid.first().and_then(|r| r.first()).map_or(0, |c| c.kurtosis.len());
    let mut inversions = vec![Vec::new(); n_obs];
    let mut passed = true;
    let compare = |a: &SweepCell, b: &SweepCell, o: usize, inv: &mut Vec<String>| {
        let (ka, kb) = (a.kurtosis[o], b.kurtosis[o]);
        if kb.value.abs() > ka.value.abs() {
            let se = (ka.std_error.powi(2) + kb.std_error.powi(2)).sqrt();
            inv.push(format!(
                "(n={}, L={}) -> (n={}, L={}): {:.4} -> {:.4}, SE {:.4}",
                a.n_qubits,
                a.layers,
                b.n_qubits,
                b.layers,
                ka.value.abs(),
                kb.value.abs(),
                se
            ));
            kb.value.abs() - ka.value.abs() <= 2.0 * se
        } else {
            true
        }
    };
    for (o, inv) in inversions.iter_mut().enumerate() {
        let mut within = true;
        for row in grid {
            for w in row.windows(2) {
                within &= compare(&w[0], &w[1], o, inv);
            }
        }
        for j in 0..grid.first().map_or(0, Vec::len) {
            for i in 1..grid.len() {
                within &= compare(&grid[i - 1][j], &grid[i][j], o, inv);
            }
        }
        passed &= within && inv.len() <= 1;
    }
    MonotonicityReport { inversions, passed }
}

/// Kurtosis of the default observables at one grid cell.
pub fn sweep_cell(config: &ExperimentConfig, n: usize, layers: usize, seed: u64) -> Result<SweepCell> {
    let obs = ObservableSet::paulis(&default_observables(n).iter().map(String::as_str).collect::<Vec<_>>())?;
    let table = load_features(config, n)?;
    let states = encode_states(&table, n, 1, config.feature_map)?;
    let outputs = sample_outputs(EnsembleOptions { n_qubits: n, depth: layers }, &states, &obs, config.samples, seed)?;
    let kurtosis = (0..obs.len()).map(|c| excess_kurtosis(&outputs.column(c))).collect();
    Ok(SweepCell {
        n_qubits: n,
        layers,
        labels: obs.labels(),
        kurtosis,
    })
}

fn run_sweep(config: &ExperimentConfig) -> Result<RunOutput> {
    let grid: Vec<Vec<SweepCell>> = config
        .sweep
        .n_qubits
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            config
                .sweep
                .layers
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    sweep_cell(
                        config,
                        n,
                        l,
                        child_seed(config.seed, "sweep-cell", (i * config.sweep.layers.len() + j) as u64),
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let report = check_monotone(&grid);
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["n_qubits", "layers", "observable", "excess_kurtosis", "std_error"])?;
    for cell in grid.iter().flatten() {
        for (label, k) in cell.labels.iter().zip(&cell.kurtosis) {
            csv.write_record([
                cell.n_qubits.to_string(),
                cell.layers.to_string(),
                label.clone(),
                format!("{:.17e}", k.value),
                format!("{:.17e}", k.std_error),
            ])?;
        }
    }
    let body = String::from_utf8(csv.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv is utf-8");
    let mut tables = BTreeMap::new();
    tables.insert("sweep.csv".to_string(), body);
    let checks = vec![Check {
        name: "kurtosis-monotone".into(),
        passed: report.passed,
        detail: format!("{:?}", report.inversions),
    }];
    Ok((json!({ "cells": grid, "monotonicity": report }), checks, tables))
}
