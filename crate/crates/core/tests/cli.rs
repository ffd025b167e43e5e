use std::path::Path;
use std::process::{Command, Output};

use coda::harness::{csv_string, parse_config, run_experiment_sequential};

fn coda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coda")).args(args).output().expect("spawn coda")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const CONFIG: &str = "# small run\nalgo = coda_primal\nproblem = quad\nT = 12\nseeds = 0..3\nmeasures = objective\nmeasure_every = 4\n";

#[test]
fn lists() {
    let out = coda(&["list-problems"]);
    assert!(out.status.success());
    let names: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(str::to_string).collect();
    assert_eq!(names.len(), 6);
    assert!(names.contains(&"wcwc".to_string()));

    let out = coda(&["list-algos"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 8);
}

#[test]
fn run_matches_library_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.cfg", CONFIG);
    let csv = dir.path().join("out.csv");
    let out = coda(&["run", &cfg, "--out", csv.to_str().unwrap(), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("objective"));

    let parsed = parse_config(CONFIG).unwrap();
    let runs = run_experiment_sequential(&parsed).unwrap();
    let ok: Vec<_> = runs.iter().map(|r| (r.seed, r.result.as_ref().unwrap())).collect();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), csv_string(&ok));

    let stdout = coda(&["run", &cfg, "--seeds", "2"]);
    assert!(stdout.status.success());
    let text = String::from_utf8(stdout.stdout).unwrap();
    // Header plus 4 records (t = 0, 4, 8, 12) for each of two seeds.
    assert_eq!(text.lines().count(), 1 + 2 * 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mismatch = write(dir.path(), "bad.cfg", "algo = coda_dual\nproblem = quad\nT = 5\nseed = 1\n");
    let out = coda(&["run", &mismatch]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let missing = dir.path().join("nope.cfg");
    assert_eq!(coda(&["run", missing.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(coda(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(coda(&["check-gradients", "no_such_problem"]).status.code(), Some(1));
}

#[test]
fn check_gradients_reports_every_derivative() {
    let out = coda(&["check-gradients", "quad", "--points", "3", "--param", "d=3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 3);
    assert!(text.lines().all(|l| l.ends_with("ok")), "{text}");
}
