use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use qnngp::circuit::{zz_feature_map, FeatureMapOptions, ObservableSet};
use qnngp::experiments::{
    default_observables, dynamics_run, ingest_csv, read_output_table, run_experiment,
    write_error_manifest, Check, CsvSchema, DataSource, DynamicsSettings, ExperimentConfig, ExperimentKind,
    FeatureTable, ResultBundle, SweepSettings,
};
use qnngp::gp::{fit_predict, KernelMode, ObservedSet, PredictionSet};
use qnngp::haar::weingarten_table;
use qnngp::linalg::{DensityMatrix, RMatrix, Tolerances};
use qnngp::near_gaussian::{
    corrected_covariance, corrected_mean, couplings_from_moments, gaussianity_diagnostics, CouplingOptions,
    MomentSet, Rounds,
};
use qnngp::rng::child_seed;
use qnngp::{Error, Result};

const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "qnngp", version, about = "Haar moments, circuit GPs and tangent kernels")]
struct Cli {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the result bundle (JSON metrics and CSV tables).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sampling.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with status 4 if any recorded check fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weingarten values by cycle type.
    WeingartenTable {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        d: usize,
    },
    /// Analytic moments against Monte Carlo.
    Moments(EnsembleArgs),
    /// Gaussianity report from a sample CSV or a fresh ensemble run.
    Gaussianity {
        /// Long-format CSV `sample_id,obs_label,value`.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[command(flatten)]
        ensemble: EnsembleArgs,
    },
    /// GP posterior on test rows given labelled training rows.
    GpPredict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Leading)]
        mode: Mode,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Pauli strings; defaults to Z on the first qubit.
        #[arg(long, value_delimiter = ',')]
        observables: Vec<String>,
    },
    /// Gradient-descent training against the frozen-kernel prediction.
    QntkTrain {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Excess kurtosis over a grid of qubit counts and depths.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        n_list: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        layers_list: Vec<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// First-order non-Gaussian corrected prediction from moments.
    NgCorrect {
        /// JSON `{moments, observed, labels, lambda, rounds?}`.
        #[arg(long)]
        moments: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct EnsembleArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Number of ensemble draws.
    #[arg(long = "n-samples")]
    n_samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    observables: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Leading,
    Exact,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NgInput {
    moments: MomentSet,
    observed: Vec<usize>,
    labels: Vec<f64>,
    #[serde(default = "unit")]
    lambda: f64,
    #[serde(default)]
    rounds: Option<Rounds>,
}

fn unit() -> f64 {
    1.0
}

/// Config from `--config` or built from defaults, with flag overrides.
fn base_config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_json_file(path)?;
            if cfg.kind != kind {
                return Err(Error::Config(format!(
                    "config kind {:?} does not match the subcommand",
                    cfg.kind
                )));
            }
            cfg
        }
        None => ExperimentConfig {
            kind,
            n_qubits: 2,
            layers: 8,
            samples: 10_000,
            seed: 0,
            data: DataSource::default(),
            output_dir: None,
            tolerances: Tolerances::default(),
            observables: Vec::new(),
            n_states: 1,
            feature_map: FeatureMapOptions::default(),
            specs_per_order: 3,
            dynamics: DynamicsSettings::default(),
            sweep: SweepSettings::default(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn apply_ensemble(cfg: &mut ExperimentConfig, args: &EnsembleArgs) {
    if let Some(n) = args.n {
        cfg.n_qubits = n;
    }
    if let Some(l) = args.layers {
        cfg.layers = l;
    }
    if let Some(s) = args.n_samples {
        cfg.samples = s;
    }
    if !args.observables.is_empty() {
        cfg.observables = args.observables.clone();
    }
}

fn bundle_for(cfg: ExperimentConfig, metrics: Value, checks: Vec<Check>) -> ResultBundle {
    ResultBundle {
        config: cfg,
        metrics,
        checks,
        wall_clock_seconds: 0.0,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        tables: Default::default(),
    }
}

fn states_from_table(table: &FeatureTable) -> Result<Vec<DensityMatrix>> {
    table
        .rows
        .iter()
        .map(|x| zz_feature_map(x, table.n_features(), FeatureMapOptions::default()))
        .collect()
}

fn gp_predict(train: &Path, test: &Path, mode: Mode, label_column: &str, observables: &[String]) -> Result<Value> {
    let schema = CsvSchema {
        required: Vec::new(),
        label_column: Some(label_column.to_string()),
    };
    let train = ingest_csv(train, &schema)?;
    let test = ingest_csv(
        test,
        &CsvSchema {
            required: train.columns.clone(),
            label_column: None,
        },
    )?;
    let test_cols: Vec<usize> = train
        .columns
        .iter()
        .map(|c| test.columns.iter().position(|t| t == c).expect("required columns checked"))
        .collect();
    let test = FeatureTable::new(
        train.columns.clone(),
        test.rows.iter().map(|r| test_cols.iter().map(|&c| r[c]).collect()).collect(),
        None,
        test.provenance.clone(),
    )?;
    let n = train.n_features();
    let labels: Vec<String> = if observables.is_empty() {
        default_observables(n).into_iter().take(1).collect()
    } else {
        observables.to_vec()
    };
    let obs = ObservableSet::paulis(&labels.iter().map(String::as_str).collect::<Vec<_>>())
        .map_err(|e| Error::Config(e.to_string()))?;
    let y = train.labels.clone().expect("label column present");
    let observed = ObservedSet::new(
        states_from_table(&train)?,
        RMatrix::from_fn(obs.len(), y.len(), |_, b| y[b]),
    )?;
    let predicted = PredictionSet {
        states: states_from_table(&test)?,
    };
    let mode = match mode {
        Mode::Leading => KernelMode::Leading,
        Mode::Exact => KernelMode::Exact,
    };
    let post = fit_predict(&obs, &observed, &predicted, mode, None)?;
    let rows = |m: &RMatrix| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
    Ok(json!({
        "observables": labels,
        "mean": rows(&post.mean),
        "variance": rows(&post.variance()),
        "log_marginal": post.log_marginal,
        "jitter": post.jitter,
        "condition_number": post.condition_number,
    }))
}

fn ng_correct(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    let input: NgInput = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let opts = CouplingOptions {
        lambda: input.lambda,
        rounds: input.rounds.unwrap_or(CouplingOptions::default().rounds),
    };
    let couplings = couplings_from_moments(&input.moments, opts)?;
    let mean = corrected_mean(&couplings.action, &input.observed, &input.labels)?;
    let cov = corrected_covariance(&couplings.action);
    let predicted: Vec<usize> = (0..cov.nrows()).filter(|i| !input.observed.contains(i)).collect();
    let covariance: Vec<Vec<f64>> = predicted
        .iter()
        .map(|&a| predicted.iter().map(|&b| cov[(a, b)]).collect())
        .collect();
    Ok(json!({
        "predicted": predicted,
        "mean": mean.as_slice(),
        "covariance": covariance,
        "interaction_strength": couplings.interaction_strength,
        "warning": couplings.warning,
        "rounds_used": couplings.rounds_used,
    }))
}

fn run(cli: &Cli) -> Result<(ResultBundle, Option<ExperimentConfig>)> {
    match &cli.command {
        Command::WeingartenTable { p, d } => {
            let table = weingarten_table(*p, *d)?;
            let residual = table.orthogonality_residual();
            let mut cfg = base_config(cli, ExperimentKind::Moments)?;
            cfg.n_qubits = 1;
            let mut bundle = bundle_for(
                cfg,
                serde_json::to_value(table.to_label_map())?,
                vec![Check {
                    name: "orthogonality".into(),
                    passed: residual < 1e-10,
                    detail: format!("residual {residual:.3e}"),
                }],
            );
            bundle.config.samples = 0;
            Ok((bundle, None))
        }
        Command::Moments(args) => {
            let mut cfg = base_config(cli, ExperimentKind::Moments)?;
            apply_ensemble(&mut cfg, args);
            Ok((run_experiment(&cfg)?, Some(cfg)))
        }
        Command::Gaussianity { samples: Some(path), .. } => {
            let table = read_output_table(path)?;
            let columns: Vec<Vec<f64>> = (0..table.labels.len()).map(|c| table.column(c)).collect();
            let report = gaussianity_diagnostics(&table.labels, &columns)?;
            let cfg = base_config(cli, ExperimentKind::Gaussianity)?;
            Ok((bundle_for(cfg, json!({ "report": report }), Vec::new()), None))
        }
        Command::Gaussianity { ensemble, .. } => {
            let mut cfg = base_config(cli, ExperimentKind::Gaussianity)?;
            apply_ensemble(&mut cfg, ensemble);
            Ok((run_experiment(&cfg)?, Some(cfg)))
        }
        Command::GpPredict {
            train,
            test,
            mode,
            label_column,
            observables,
        } => {
            let metrics = gp_predict(train, test, *mode, label_column, observables)?;
            let cfg = base_config(cli, ExperimentKind::Dynamics)?;
            Ok((bundle_for(cfg, metrics, Vec::new()), None))
        }
        Command::QntkTrain {
            n,
            layers,
            eta,
            steps,
            n_train,
            n_test,
        } => {
            let mut cfg = base_config(cli, ExperimentKind::Dynamics)?;
            cfg.n_qubits = n.unwrap_or(cfg.n_qubits);
            cfg.layers = layers.unwrap_or(cfg.layers);
            let d = &mut cfg.dynamics;
            d.eta = eta.unwrap_or(d.eta);
            d.steps = steps.unwrap_or(d.steps);
            d.n_train = n_train.unwrap_or(d.n_train);
            d.n_test = n_test.unwrap_or(d.n_test);
            cfg.validate()?;
            if cli.config.is_some() {
                return Ok((run_experiment(&cfg)?, Some(cfg)));
            }
            // Random angles and labels, as in the lazy-training study.
            let nq = cfg.n_qubits;
            let count = cfg.dynamics.n_train + cfg.dynamics.n_test;
            let mut rng = qnngp::rng::substream(cfg.seed, "qntk-train-data", 0);
            use rand::Rng;
            let states = (0..count)
                .map(|_| {
                    let x: Vec<f64> = (0..nq).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
                    zz_feature_map(&x, nq, cfg.feature_map)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<f64> = (0..cfg.dynamics.n_train).map(|_| rng.random_range(-0.5..0.5)).collect();
            let obs = ObservableSet::paulis(&[default_observables(nq)[0].as_str()])?;
            let (summary, csv) = dynamics_run(
                nq,
                cfg.layers,
                &states,
                &labels,
                &cfg.dynamics,
                &obs,
                child_seed(cfg.seed, "qntk-train", 0),
            )?;
            let checks = vec![Check {
                name: "gp-kernel-regression-bridge".into(),
                passed: summary.bridge_max_abs_diff < 1e-10,
                detail: format!("max |Δ| = {:.3e}", summary.bridge_max_abs_diff),
            }];
            let mut bundle = bundle_for(cfg.clone(), json!({ "summary": summary }), checks);
            bundle.tables.insert("trajectory.csv".into(), csv);
            Ok((bundle, Some(cfg)))
        }
        Command::Sweep {
            n_list,
            layers_list,
            samples,
        } => {
            let mut cfg = base_config(cli, ExperimentKind::Sweep)?;
            if !n_list.is_empty() {
                cfg.sweep.n_qubits = n_list.clone();
            }
            if !layers_list.is_empty() {
                cfg.sweep.layers = layers_list.clone();
            }
            if let Some(s) = samples {
                cfg.samples = *s;
            }
            Ok((run_experiment(&cfg)?, Some(cfg)))
        }
        Command::NgCorrect { moments } => {
            let metrics = ng_correct(moments)?;
            let cfg = base_config(cli, ExperimentKind::Moments)?;
            Ok((bundle_for(cfg, metrics, Vec::new()), None))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok((bundle, _)) => {
            if let Some(dir) = &cli.out {
                if let Err(e) = bundle.write(dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "seed": bundle.config.seed,
                    "metrics": bundle.metrics,
                    "checks": bundle.checks,
                }))
                .expect("serializable")
            );
            if cli.check && !bundle.all_checks_pass() {
                for c in bundle.checks.iter().filter(|c| !c.passed) {
                    eprintln!("check failed: {} ({})", c.name, c.detail);
                }
                return ExitCode::from(EXIT_CHECK_FAILED);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = &cli.out {
                let cfg = cli
                    .config
                    .as_deref()
                    .and_then(|p| ExperimentConfig::from_json_file(p).ok());
                if let Err(w) = write_error_manifest(dir, cfg.as_ref(), &e) {
                    eprintln!("could not write error manifest: {w}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
