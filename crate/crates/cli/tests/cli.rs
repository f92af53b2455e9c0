use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn jointid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointid"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Parses `err_A=.. err_Sigma=..` from the fit output.
fn errors(out: &Output) -> (f64, f64) {
    let text = stdout(out);
    let line = text.lines().find(|l| l.starts_with("err_A=")).expect("error line");
    let mut it = line.split_whitespace().map(|kv| kv.split_once('=').unwrap().1.parse::<f64>().unwrap());
    (it.next().unwrap(), it.next().unwrap())
}

#[test]
fn simulate_writes_n_rows() {
    let dir = TempDir::new().unwrap();
    let out = jointid(&["simulate", "--dim", "3", "--n", "250", "--seed", "11", "--out", "d.csv"], dir.path());
    ok(&out);
    let text = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x_0,x_1,x_2,xp_0,xp_1,xp_2");
    assert_eq!(lines.count(), 250);
    assert!(dir.path().join("d.csv.meta.json").exists());
}

#[test]
fn simulate_is_deterministic_in_seed() {
    let dir = TempDir::new().unwrap();
    for name in ["a.csv", "b.csv"] {
        ok(&jointid(&["simulate", "--n", "100", "--seed", "5", "--out", name], dir.path()));
    }
    ok(&jointid(&["simulate", "--n", "100", "--seed", "6", "--out", "c.csv"], dir.path()));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    let c = fs::read(dir.path().join("c.csv")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_dimension_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = jointid(&["simulate", "--dim", "0", "--out", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("d.csv").exists());
}

#[test]
fn unknown_estimator_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    ok(&jointid(&["simulate", "--n", "50", "--out", "d.csv"], dir.path()));
    let out = jointid(&["fit", "--data", "d.csv", "--estimator", "lasso"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["ols", "mle", "mle_iter", "sme"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"grid.n": [64], "no_such_key": 1}"#).unwrap();
    let out = jointid(&["bench", "--config", "c.json", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = jointid(&["bench", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = jointid(&["fit", "--data", "nope.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noiseless_data_gives_exact_ols() {
    let dir = TempDir::new().unwrap();
    // x' = A x for A = [[0.5, 0.1], [0, 0.9]]
    let a = [[0.5, 0.1], [0.0, 0.9]];
    let mut csv = String::from("x_0,x_1,xp_0,xp_1\n");
    let inputs = [[1.0, 0.0], [0.0, 1.0], [1.0, 2.0], [-3.0, 0.5], [2.0, -1.0]];
    for x in inputs {
        let y0 = a[0][0] * x[0] + a[0][1] * x[1];
        let y1 = a[1][0] * x[0] + a[1][1] * x[1];
        csv.push_str(&format!("{},{},{},{}\n", x[0], x[1], y0, y1));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let out = jointid(&["fit", "--data", "d.csv", "--estimator", "ols", "--out", "r.json"], dir.path());
    ok(&out);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let got: Vec<f64> = report["a"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let want = [0.5, 0.1, 0.0, 0.9];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
}

#[test]
fn gaussian_mle_matches_ols() {
    let dir = TempDir::new().unwrap();
    ok(&jointid(
        &["simulate", "--n", "400", "--seed", "2", "--density", "gaussian", "--out", "d.csv"],
        dir.path(),
    ));
    let mut mats = Vec::new();
    for est in ["ols", "mle"] {
        let report = format!("{est}.json");
        let out = jointid(
            &["fit", "--data", "d.csv", "--density", "gaussian", "--estimator", est, "--out", &report],
            dir.path(),
        );
        ok(&out);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(&report)).unwrap()).unwrap();
        let flat: Vec<f64> = ["a", "sigma"]
            .iter()
            .flat_map(|k| v[*k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>())
            .collect();
        mats.push(flat);
    }
    for (o, m) in mats[0].iter().zip(&mats[1]) {
        assert!((o - m).abs() <= 1e-6 * o.abs().max(1.0), "{:?} vs {:?}", mats[0], mats[1]);
    }
}

#[test]
fn fit_reports_errors_against_truth() {
    let dir = TempDir::new().unwrap();
    ok(&jointid(&["simulate", "--n", "2000", "--seed", "9", "--out", "d.csv"], dir.path()));
    let out = jointid(&["fit", "--data", "d.csv", "--estimator", "sme", "--out", "r.json"], dir.path());
    ok(&out);
    let (ea, es) = errors(&out);
    assert!(ea < 0.1 && es < 1.0, "{ea} {es}");
}

const SMALL: &str = r#"{"experiment": "error_vs_n", "grid.n": [64, 128], "replications": 3, "seed": 7}"#;

fn strip_timing(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let t = header.iter().position(|h| *h == "wall_time_seconds").unwrap();
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != t)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn bench_row_count_is_grid_times_reps_times_estimators() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    ok(&jointid(&["bench", "--config", "c.json", "--out", "res"], dir.path()));
    let csv = fs::read_to_string(dir.path().join("res/error_vs_n.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "experiment,estimator,n,d,eps,replication,seed,err_A,err_Sigma,wall_time_seconds,iterations,status"
    );
    assert_eq!(csv.lines().count() - 1, 2 * 3 * 4);
    assert!(dir.path().join("res/error_vs_n_summary.csv").exists());
}

#[test]
fn bench_reruns_match_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    ok(&jointid(&["bench", "--config", "c.json", "--out", "r1", "--threads", "1"], dir.path()));
    ok(&jointid(&["bench", "--config", "c.json", "--out", "r2", "--threads", "2"], dir.path()));
    let a = fs::read_to_string(dir.path().join("r1/error_vs_n.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("r2/error_vs_n.csv")).unwrap();
    assert_eq!(strip_timing(&a), strip_timing(&b));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    ok(&jointid(&["bench", "--config", "c.json", "--out", "first"], dir.path()));
    ok(&jointid(
        &["bench", "--config", "first/effective_config.json", "--out", "second"],
        dir.path(),
    ));
    let a = fs::read_to_string(dir.path().join("first/error_vs_n.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("second/error_vs_n.csv")).unwrap();
    assert_eq!(strip_timing(&a), strip_timing(&b));
}

#[test]
fn iter_mle_bench_adds_gap_rows() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.json"), SMALL).unwrap();
    let out = jointid(&["bench", "--config", "c.json", "--experiment", "iter_mle", "--out", "res"], dir.path());
    ok(&out);
    let csv = fs::read_to_string(dir.path().join("res/iter_mle.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * 3 * 2);
    let summary = fs::read_to_string(dir.path().join("res/iter_mle_summary.csv")).unwrap();
    assert!(summary.contains("mle_iter_vs_mle"));
}

#[test]
fn sme_above_cap_is_skipped_not_failed() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"experiment": "error_vs_dim", "grid.d": [2, 8], "grid.n": [64], "replications": 1, "sme.dim_cap": 4}"#,
    )
    .unwrap();
    ok(&jointid(&["bench", "--config", "c.json", "--out", "res"], dir.path()));
    let csv = fs::read_to_string(dir.path().join("res/error_vs_dim.csv")).unwrap();
    let sme: Vec<&str> = csv.lines().filter(|l| l.contains(",sme,")).collect();
    assert_eq!(sme.len(), 2);
    assert!(sme.iter().any(|l| l.contains(",8,") && l.ends_with(",skipped")));
    assert!(sme.iter().any(|l| l.contains(",2,") && l.ends_with(",ok")));
}
