use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file)
}

fn diffmpm(args: &[&str], out: &Path) -> Output {
    let dir = format!("output.dir={:?}", out.display().to_string());
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_diffmpm"));
    cmd.args(args);
    if args.len() > 1 {
        cmd.args(["--set", &dir]);
    }
    cmd.output().unwrap()
}

const SMALL_BAR: [&str; 4] = ["--set", "geometry.cell_size=\"1.5625 m\"", "--set", "study.cell_sizes=[]"];

fn with(head: &[&str], tail: &[&str]) -> Vec<String> {
    head.iter().chain(tail).map(|s| s.to_string()).collect()
}

fn run(args: Vec<String>, out: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    diffmpm(&refs, out)
}

#[test]
fn run_prints_json_summary_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let bar = config("bar_elastic.toml");
    let out = run(with(&["run", bar.to_str().unwrap()], &SMALL_BAR), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["scenario"], "bar");
    assert_eq!(json["steps"], 40);
    assert!(json["wall_s"].as_f64().unwrap() > 0.0);
    assert!(!json["checks"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(tmp.path().join("stress.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn check_exits_zero_when_all_checks_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let bar = config("bar_elastic.toml");
    let out = run(with(&["check", bar.to_str().unwrap()], &SMALL_BAR), tmp.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS stress error")));
    assert!(!text.contains("FAIL"));
}

#[test]
fn nonconvergence_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bar = config("bar_elastic.toml");
    let out = run(
        with(&["run", bar.to_str().unwrap()], &[&SMALL_BAR[..], &["--set", "solver.max_iters=1"]].concat()),
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let bar = config("bar_elastic.toml");
    let bar = bar.to_str().unwrap();
    for args in [
        vec!["run", bar, "--set", "geometry.bogus=1"],
        vec!["check", bar, "--set", "material.poisson_ratio=0.6"],
        vec!["run", "/nonexistent/config.toml"],
        vec!["bench", bar, "--strategy", "diagonal"],
        vec!["frobnicate"],
    ] {
        let out = diffmpm(&args, tmp.path());
        assert_eq!(out.status.code(), Some(3), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn bench_strategies_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let bar = config("bar_elastic.toml");
    let mut tips = Vec::new();
    for strategy in ["sparse", "dense"] {
        let out = run(with(&["bench", bar.to_str().unwrap(), "--strategy", strategy], &SMALL_BAR), tmp.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        tips.push(json["checks"].clone());
    }
    let measured = |v: &serde_json::Value| {
        v.as_array().unwrap().iter().map(|c| c["measured"].as_f64().unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (measured(&tips[0]), measured(&tips[1]));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-30), "{x} vs {y}");
    }
}

#[test]
fn help_exits_zero() {
    let out = Command::new(env!("CARGO_BIN_EXE_diffmpm")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
