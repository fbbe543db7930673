use std::path::Path;
use std::process::Command;

use qnngp::experiments::*;
use qnngp::linalg::RMatrix;
use qnngp::stats::MomentEstimate;
use qnngp::Error;
use serde_json::Value;

fn schema() -> CsvSchema {
    CsvSchema::default()
}

fn parse(text: &str, schema: &CsvSchema) -> qnngp::Result<FeatureTable> {
    ingest_csv_reader(text.as_bytes(), Path::new("mem.csv"), schema)
}

fn config(kind: ExperimentKind, n: usize, layers: usize, samples: usize, seed: u64) -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "kind": kind,
        "n_qubits": n,
        "layers": layers,
        "samples": samples,
        "seed": seed,
    }))
    .unwrap()
}

#[test]
fn empty_csv_is_a_schema_error() {
    let s = CsvSchema {
        required: vec!["x0".into()],
        label_column: None,
    };
    match parse("", &s) {
        Err(Error::Schema { message, .. }) => assert!(message.contains("x0"), "{message}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse("", &schema()), Err(Error::Schema { .. })));
}

#[test]
fn four_column_csv() {
    let t = parse("a,b,c,d\n1,2,3,4\n-1.5,0,2e-3,7\n", &schema()).unwrap();
    assert_eq!(t.n_features(), 4);
    assert_eq!(t.n_rows(), 2);
    assert_eq!(t.rows[1], vec![-1.5, 0.0, 2e-3, 7.0]);
    assert!(t.labels.is_none());
}

#[test]
fn label_column_is_split_off() {
    let s = CsvSchema {
        required: vec![],
        label_column: Some("y".into()),
    };
    let t = parse("a,y,b\n1,-1,2\n3,1,4\n", &s).unwrap();
    assert_eq!(t.columns, vec!["a", "b"]);
    assert_eq!(t.labels, Some(vec![-1.0, 1.0]));
    assert!(matches!(parse("a,b\n1,2\n", &s), Err(Error::Schema { .. })));
}

#[test]
fn malformed_cell_cites_row_and_column() {
    match parse("a,b,c\n1,2,3\n4,5,6\n7,x8,9\n", &schema()) {
        Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (4, 2)),
        other => panic!("{other:?}"),
    }
    // comma decimals are not accepted
    assert!(matches!(parse("a\n\"1,5\"\n", &schema()), Err(Error::Parse { row: 2, col: 1, .. })));
    assert!(matches!(parse("a,b\n1,inf\n", &schema()), Err(Error::Parse { row: 2, col: 2, .. })));
    assert!(matches!(parse("a,b\n1\n", &schema()), Err(Error::Parse { row: 2, .. })));
}

fn table(rows: Vec<Vec<f64>>) -> FeatureTable {
    let p = rows[0].len();
    FeatureTable::new((0..p).map(|c| format!("x{c}")).collect(), rows, None, "test").unwrap()
}

#[test]
fn pca_of_full_rank_data_is_a_rotation() {
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|r| {
            let t = r as f64;
            vec![3.0 * (0.37 * t).sin(), (1.3 * t).cos() + 0.2 * (0.37 * t).sin()]
        })
        .collect();
    let t = table(rows);
    let pca = Pca::fit(&t, 2).unwrap();
    let c = &pca.components;
    assert!((c.transpose() * c - RMatrix::identity(2, 2)).amax() < 1e-12);
    let back = pca.reconstruct(&pca.project(&t));
    assert!((back - t.to_matrix()).amax() < 1e-12);
    assert!(pca.variances[0] >= pca.variances[1]);
}

#[test]
fn pca_reconstructs_rank_k_data() {
    let (k, p) = (2, 6);
    let basis = [[1.0, -0.5, 0.3, 0.0, 2.0, 0.1], [0.2, 0.4, -1.0, 0.7, 0.0, 0.5]];
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|r| {
            let (a, b) = ((0.7 * r as f64).sin() * 2.0, (0.31 * r as f64).cos());
            (0..p).map(|c| 1.0 + a * basis[0][c] + b * basis[1][c]).collect()
        })
        .collect();
    let t = table(rows);
    let pca = Pca::fit(&t, k).unwrap();
    let back = pca.reconstruct(&pca.project(&t));
    assert!((back - t.to_matrix()).amax() < 1e-8);
    let full = Pca::fit(&t, p).unwrap();
    assert!(full.variances.windows(2).all(|w| w[0] >= w[1]));
    assert!(full.variances[k..].iter().all(|v| *v < 1e-10));
    for j in 0..k {
        let col = pca.components.column(j);
        let lead = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        assert!(lead > 0.0);
    }
}

#[test]
fn pca_reduce_rescales_to_angles() {
    let t = synthetic_dataset(30, 5, 1).unwrap();
    let r = pca_reduce(&t, 3).unwrap();
    assert_eq!(r.n_features(), 3);
    for j in 0..3 {
        let col: Vec<f64> = r.rows.iter().map(|row| row[j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo.abs() < 1e-12 && (hi - std::f64::consts::TAU).abs() < 1e-12);
    }
    assert_eq!(r.labels, t.labels);
    assert!(pca_reduce(&t, 6).is_err());
    let constant = table(vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 5.0]]);
    let r = pca_reduce(&constant, 2).unwrap();
    assert!(r.rows.iter().all(|row| row[1] == 0.0));
}

#[test]
fn moments_bundle_z_scores_below_four() {
    let b = run_experiment(&config(ExperimentKind::Moments, 2, 8, 10_000, 11)).unwrap();
    assert!(b.all_checks_pass(), "{:?}", b.checks);
    let rows = b.metrics["correlators"].as_array().unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        assert!(r["z_score"].as_f64().unwrap() < 4.0);
    }
}

#[test]
fn metrics_are_byte_identical_across_runs() {
    let c = config(ExperimentKind::Moments, 2, 4, 2_000, 7);
    let a = run_experiment(&c).unwrap().metrics_json().unwrap();
    let b = run_experiment(&c).unwrap().metrics_json().unwrap();
    assert_eq!(a, b);
    let other = run_experiment(&config(ExperimentKind::Moments, 2, 4, 2_000, 8)).unwrap();
    assert_ne!(a, other.metrics_json().unwrap());
}

#[test]
fn gaussianity_bundle_has_every_kurtosis_column() {
    let b = run_experiment(&config(ExperimentKind::Gaussianity, 4, 32, 2_000, 3)).unwrap();
    assert!(b.all_checks_pass());
    let k = b.metrics["report"]["kurtosis"].as_array().unwrap();
    assert_eq!(k.len(), 3);
    assert!(k.iter().all(|e| e["value"].is_f64() && e["std_error"].as_f64().unwrap() >= 0.0));
    assert_eq!(b.metrics["report"]["labels"].as_array().unwrap().len(), 3);
    let csv = &b.tables["samples.csv"];
    assert!(csv.starts_with("sample_id,obs_label,value"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2_000);
}

#[test]
fn bundle_replays_from_embedded_config() {
    let b = run_experiment(&config(ExperimentKind::Dynamics, 2, 8, 0, 21)).unwrap();
    let text = serde_json::to_string(&b).unwrap();
    let back: ResultBundle = serde_json::from_str(&text).unwrap();
    let again = run_experiment(&back.config).unwrap();
    assert_eq!(again.metrics_json().unwrap(), b.metrics_json().unwrap());
    assert!(b.all_checks_pass(), "{:?}", b.checks);
    assert!(b.tables["trajectory.csv"].lines().count() == 1 + 101);
}

#[test]
fn bundle_write_is_atomic_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let b = run_experiment(&config(ExperimentKind::Moments, 1, 2, 500, 2)).unwrap();
    b.write(&dir).unwrap();
    let on_disk = std::fs::read_to_string(dir.join("metrics.json")).unwrap();
    assert_eq!(on_disk, b.metrics_json().unwrap());
    let bundle: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["config"]["seed"], 2);
    // overwriting an existing bundle is allowed
    b.write(&dir).unwrap();
    let names: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["run".to_string()]);

    let foreign = tmp.path().join("foreign");
    std::fs::create_dir(&foreign).unwrap();
    std::fs::write(foreign.join("notes.txt"), "keep").unwrap();
    assert!(b.write(&foreign).is_err());
    assert_eq!(std::fs::read_to_string(foreign.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn error_manifest_replaces_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let c = config(ExperimentKind::Moments, 1, 2, 500, 2);
    run_experiment(&c).unwrap().write(&dir).unwrap();
    let err = Error::Config("boom".into());
    write_error_manifest(&dir, Some(&c), &err).unwrap();
    assert!(!dir.join("metrics.json").exists());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].as_str().unwrap().contains("boom"));
    assert_eq!(m["config"]["seed"], 2);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = config(ExperimentKind::Gaussianity, 2, 4, 999, 0);
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    c.samples = 1000;
    c.n_qubits = 7;
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    c.n_qubits = 2;
    c.observables = vec!["ZZZ".into()];
    assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
    let unknown = serde_json::json!({"kind": "moments", "n_qubits": 2, "layers": 1, "samples": 100, "seed": 0, "bogus": 1});
    assert!(serde_json::from_value::<ExperimentConfig>(unknown).is_err());
    let missing = serde_json::json!({"kind": "moments", "n_qubits": 2, "layers": 1, "samples": 100});
    assert!(serde_json::from_value::<ExperimentConfig>(missing).is_err());
}

#[test]
fn csv_data_source_feeds_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("data.csv");
    let t = synthetic_dataset(10, 4, 5).unwrap();
    t.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let mut c = config(ExperimentKind::Moments, 2, 4, 200, 1);
    c.data = DataSource::Csv {
        path: path.clone(),
        label_column: Some("label".into()),
    };
    c.n_states = 2;
    let b = run_experiment(&c).unwrap();
    assert_eq!(b.metrics["correlators"].as_array().unwrap().len(), 12);
    c.data = DataSource::Csv {
        path: tmp.path().join("missing.csv"),
        label_column: None,
    };
    assert!(matches!(run_experiment(&c), Err(Error::Io(_))));
}

fn cell(n: usize, layers: usize, k: f64, se: f64) -> SweepCell {
    SweepCell {
        n_qubits: n,
        layers,
        labels: vec!["o".into()],
        kurtosis: vec![MomentEstimate {
            value: k,
            std_error: se,
            n_samples: 1000,
        }],
    }
}

#[test]
fn monotonicity_check() {
    let good = vec![
        vec![cell(2, 2, -1.0, 0.01), cell(2, 8, -0.6, 0.01)],
        vec![cell(4, 2, -0.5, 0.01), cell(4, 8, -0.3, 0.01)],
    ];
    assert!(check_monotone(&good).passed);
    let mut one_small = good.clone();
    one_small[1][1] = cell(4, 8, -0.505, 0.01);
    let r = check_monotone(&one_small);
    assert!(r.passed);
    assert_eq!(r.inversions[0].len(), 1);
    let mut big = good.clone();
    big[1][1] = cell(4, 8, -0.9, 0.01);
    assert!(!check_monotone(&big).passed);
    let mut two = good;
    two[0][1] = cell(2, 8, -1.001, 0.01);
    two[1][1] = cell(4, 8, -0.501, 0.01);
    assert!(!check_monotone(&two).passed);
}

#[test]
fn doubling_samples_shrinks_standard_errors() {
    let c = config(ExperimentKind::Sweep, 2, 8, 4_000, 13);
    let a = sweep_cell(&c, 2, 8, 99).unwrap();
    let mut c2 = c.clone();
    c2.samples = 8_000;
    let b = sweep_cell(&c2, 2, 8, 99).unwrap();
    for (x, y) in a.kurtosis.iter().zip(&b.kurtosis) {
        assert!(y.std_error < x.std_error * 1.0, "{x:?} -> {y:?}");
    }
}

#[test]
fn weingarten_subcommand_prints_metrics() {
    let out = Command::new(env!("CARGO_BIN_EXE_qnngp"))
        .args(["weingarten-table", "--p", "2", "--d", "4", "--check"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 0);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_qnngp");
    let tmp = tempfile::tempdir().unwrap();
    // config error: too few samples for the diagnostics
    let out = Command::new(bin).args(["gaussianity", "--n", "2", "--n-samples", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // mismatched config kind
    let cfg = tmp.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "moments", "n_qubits": 2, "layers": 2, "samples": 200, "seed": 4}"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["sweep", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // numerical error: the Weingarten Gram matrix is singular for d < p
    let err_dir = tmp.path().join("err");
    let out = Command::new(bin)
        .args(["weingarten-table", "--p", "3", "--d", "2", "--out"])
        .arg(&err_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(err_dir.join("error.json").exists());
    // config file run with --out writes a bundle carrying the seed override
    let run_dir = tmp.path().join("run");
    let out = Command::new(bin)
        .args(["moments", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 9);
}
