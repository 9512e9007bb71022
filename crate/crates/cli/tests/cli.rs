use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rtm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, "repeats = 2\n\n[algorithm]\nensemble_size = 40\n").unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_reproducible_records() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--out", s(&a)]);
    ok(&["simulate", "--out", s(&b), "--config", s(&a.join("config.toml"))]);
    let records = fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(records, fs::read_to_string(b.join("records.csv")).unwrap());
    // Header plus five times, each with the front and nine sensors.
    assert_eq!(records.lines().count(), 1 + 5 * 10);
    let other = tmp.path().join("c");
    ok(&["simulate", "--out", s(&other), "--seed", "8"]);
    assert_ne!(records, fs::read_to_string(other.join("records.csv")).unwrap());
}

#[test]
fn run_output_does_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let (one, three) = (tmp.path().join("one"), tmp.path().join("three"));
    ok(&["run", "--config", s(&config), "--out", s(&one), "--workers", "1"]);
    ok(&["run", "--config", s(&config), "--out", s(&three), "--workers", "3"]);
    let metrics = fs::read(one.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(three.join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8(metrics).unwrap().lines().count(), 1 + 2 * 5);
    for file in ["trace.csv", "summaries.csv", "manifest.json", "cost.json"] {
        assert!(one.join(file).exists(), "{file} missing");
    }
    let plots = tmp.path().join("plots");
    let listed = ok(&["plot", "--input", s(&one), "--out", s(&plots)]);
    assert!(plots.join("errors.svg").exists());
    assert!(plots.join("percentiles_n5.svg").exists());
    assert!(String::from_utf8(listed.stdout).unwrap().contains("errors.svg"));
}

#[test]
fn run_reuses_simulated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["simulate", "--config", s(&config), "--out", s(&data)]);
    let (direct, loaded) = (tmp.path().join("direct"), tmp.path().join("loaded"));
    ok(&["run", "--config", s(&config), "--out", s(&direct), "--repeats", "1"]);
    ok(&["run", "--config", s(&config), "--out", s(&loaded), "--repeats", "1", "--data", s(&data)]);
    assert_eq!(fs::read(direct.join("metrics.csv")).unwrap(), fs::read(loaded.join("metrics.csv")).unwrap());
}

#[test]
fn invalid_configuration_is_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[algorithm]\nensemble_size = 1\n").unwrap();
    let out = rtm(&["run", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "config");
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "[algorithm]\nensemble_sise = 10\n").unwrap();
    let out = rtm(&["simulate", "--config", s(&typo), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ensemble_sise"));
}

#[test]
fn small_sweep_writes_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let spec = tmp.path().join("sweep.toml");
    fs::write(&spec, "repeats = 2\n\n[axis]\nkind = \"noise\"\nlevels = [0.05, 0.01]\n").unwrap();
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", s(&config), "--sweep", s(&spec), "--out", s(&out), "--workers", "2"]);
    let table = fs::read_to_string(out.join("sweep_truth_error.csv")).unwrap();
    assert!(table.contains("noise-0.05") && table.contains("noise-0.01"));
    let plots = out.join("plots");
    ok(&["plot", "--input", s(&out), "--out", s(&plots)]);
    assert!(plots.join("sweep_total_stages.svg").exists());
}
