use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use sovlab::cli::*;
use sovlab::SovError;

fn sovlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sovlab")).args(args).output().expect("binary runs")
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn resolve(json: &str) -> Result<Context, SovError> {
    Context::resolve(&RunConfig::from_json(json)?, &Overrides::default())
}

#[test]
fn rationals_and_complex_numbers() {
    assert_eq!(parse_rational("3/4").unwrap(), 0.75);
    assert_eq!(parse_rational(" -5 / 2 ").unwrap(), -2.5);
    assert_eq!(parse_rational("0.125").unwrap(), 0.125);
    assert!(parse_rational("1/0").is_err());
    assert!(parse_rational("a/b").is_err());
    let cfg = RunConfig::from_json(r#"{"eta": ["1/2", -0.25]}"#).unwrap();
    let z = cfg.eta.unwrap().value().unwrap();
    assert_eq!((z.re, z.im), (0.5, -0.25));
}

#[test]
fn config_validation_errors() {
    let dup = r#"{"twist": {"matrix": [[1,0,0],[0,2,0],[0,0,3]], "eigenvalues": [1, 2, 3]}}"#;
    assert!(matches!(resolve(dup), Err(SovError::Config(_))));
    let half = r#"{"twist": {"w": [[1,0,0],[0,1,0],[0,0,1]]}}"#;
    assert!(matches!(resolve(half), Err(SovError::Config(_))));
    assert!(matches!(resolve(r#"{"tasks": ["nosuch"]}"#), Err(SovError::Config(_))));
    assert!(matches!(resolve(r#"{"algebra": "gl2", "tasks": ["det0"]}"#), Err(SovError::Config(_))));
    assert!(matches!(resolve(r#"{"tolerances": {"gram.bogus": 1e-3}}"#), Err(SovError::Config(_))));
    assert!(matches!(resolve(r#"{"unknown_field": 1}"#), Err(SovError::Config(_))));
    // xi colliding at distance eta
    let clash = r#"{"eta": [1, 0], "xi": [[0, 0], [1, 0]], "twist": {"eigenvalues": [1, 2, 3]}}"#;
    assert!(matches!(resolve(clash), Err(SovError::Config(_))));
}

#[test]
fn explicit_model_resolves_every_form() {
    let w = r#"[[1,0,0],[0,1,0],[0,0,1]]"#;
    for twist in [
        r#"{"matrix": [[1,0,0],[0,2,0],[0,0,3]]}"#.to_string(),
        r#"{"eigenvalues": ["1/2", [2, 1], -3]}"#.to_string(),
        format!(r#"{{"w": {w}, "k_jordan": [[2,1,0],[0,2,0],[0,0,-1]]}}"#),
    ] {
        let json = format!(r#"{{"eta": ["1/2", "1/4"], "xi": [[0.25, 0], [-1, 0.5]], "twist": {twist}, "tasks": ["yangbaxter"]}}"#);
        let ctx = resolve(&json).unwrap();
        assert_eq!(ctx.config.model, "explicit");
        assert_eq!(ctx.sites(), 2);
        assert_eq!(ctx.config.eta, Some([0.5, 0.25]));
        let out = run(&ctx);
        assert!(out.report.passed, "{twist} {:?}", out.report.tasks[0]);
    }
    let sampled = resolve(r#"{"eta": [1, 0.5], "xi": {"seed": 4, "grid": [6, 2]}, "sites": 3}"#).unwrap();
    assert_eq!(sampled.config.xi.as_ref().unwrap().len(), 3);
    assert!(sampled.config.xi.unwrap().iter().all(|z| (z[0] * 2.0).fract() == 0.0 && z[0].abs() <= 3.0));
}

#[test]
fn tolerance_overrides() {
    let ov = Overrides { tol: Some(1e-3), ..Default::default() };
    let ctx = Context::resolve(&RunConfig::default(), &ov).unwrap();
    assert_eq!(ctx.bound("gram.diagonal"), (1e-3, Bound::Upper));
    assert_eq!(ctx.bound("gram.offdiag_floor"), (1e-6, Bound::Lower));
    let ctx = resolve(r#"{"tolerances": {"fusion.qdet": 1e-6}}"#).unwrap();
    assert_eq!(ctx.config.tolerances["fusion.qdet"], 1e-6);
}

#[test]
fn verify_all_two_sites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sovlab(&["verify", "--all", "-N", "2", "--seed", "7", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let rep = read_report(dir.path());
    let names: Vec<&str> = rep["tasks"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, SUITES.to_vec());
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(rep["config"]["seed"], 7);
    assert_eq!(rep["config"]["sites"], 2);
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    // sorted keys at the top level
    let top: Vec<usize> = ["config", "passed", "tasks", "version"].iter().map(|k| text.find(&format!("\n  \"{k}\"")).unwrap()).collect();
    assert!(top.windows(2).all(|w| w[0] < w[1]));
    let summary = sovlab(&["report", "--out", out]);
    assert!(summary.status.success());
    assert_eq!(String::from_utf8_lossy(&summary.stdout).lines().count(), SUITES.len());
}

#[test]
fn gl2_measure_writes_sixteen_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let json = format!(
        r#"{{"algebra": "gl2", "sites": 2, "seed": 3, "tasks": ["measure"], "output": {:?}}}"#,
        dir.path().join("out").to_str().unwrap()
    );
    fs::write(&cfg, json).unwrap();
    let o = sovlab(&["verify", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    for file in ["gram.csv", "measure.csv"] {
        let csv = fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "h,k,value");
        assert_eq!(lines.len(), 17);
        let last = lines[16];
        assert!(last.starts_with("3,3,\""));
        let cell = last.trim_start_matches("3,3,").trim_matches('"');
        let parts: Vec<f64> = cell.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(parts.len(), 2);
    }
}

#[test]
fn duplicate_twist_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"twist": {"matrix": [[1,0,0],[0,2,0],[0,0,3]], "eigenvalues": [1,2,3]}}"#).unwrap();
    let o = sovlab(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn failing_tolerance_gives_task_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = sovlab(&["verify", "--suite", "yangbaxter,fusion", "-N", "1", "--tol", "1e-300", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("task failure"));
    let rep = read_report(dir.path());
    assert_eq!(rep["passed"], false);
    assert!(rep["tasks"].as_array().unwrap().iter().any(|t| !t["failures"].as_array().unwrap().is_empty()));
}

#[test]
fn identical_seeds_give_identical_numbers() {
    let ctx = Context::resolve(
        &RunConfig::default(),
        &Overrides { seed: Some(11), sites: Some(2), suites: vec!["gram".into(), "det0".into(), "gl2".into()], ..Default::default() },
    )
    .unwrap();
    let a = run(&ctx).report.to_json();
    let b = run(&ctx).report.to_json();
    assert_eq!(a, b);
    let other = Context::resolve(
        &RunConfig::default(),
        &Overrides { seed: Some(12), sites: Some(2), suites: vec!["gram".into()], ..Default::default() },
    )
    .unwrap();
    let c: Value = serde_json::from_str(&run(&other).report.to_json()).unwrap();
    let a: Value = serde_json::from_str(&a).unwrap();
    assert_ne!(a["tasks"][0]["residuals"], c["tasks"][0]["residuals"]);
}

#[test]
fn bench_records_both_paths() {
    let opts = BenchOptions { seed: 1, n_min: 4, n_max: 9, dense_max: 4, repeats: 1 };
    let rows = bench(&opts).unwrap();
    let again = bench(&opts).unwrap();
    assert_eq!(rows.len(), 12);
    for (r, s) in rows.iter().zip(&again) {
        assert_eq!(r.checksum, s.checksum);
        if r.path == "matrix_free" {
            assert_eq!(r.status, "ok");
            assert!(r.checksum.unwrap().norm().is_finite());
        }
    }
    let dense9 = rows.iter().find(|r| r.sites == 9 && r.path == "dense").unwrap();
    assert!(dense9.status.starts_with("SizeCap"), "{}", dense9.status);
    let dense4 = rows.iter().find(|r| r.sites == 4 && r.path == "dense").unwrap();
    assert_eq!(dense4.status, "ok");
    let free4 = rows.iter().find(|r| r.sites == 4 && r.path == "matrix_free").unwrap();
    let (x, y) = (dense4.checksum.unwrap(), free4.checksum.unwrap());
    assert!((x - y).norm() <= 1e-10 * x.norm());
    let csv = bench_csv(&rows);
    assert_eq!(csv.lines().count(), 13);
}
