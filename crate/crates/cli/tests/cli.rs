use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use wallbuild::harness::ExperimentReport;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wallbuild")).args(args).output().expect("binary runs")
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/full_mission.json")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn shipped_scenario_is_the_six_brick_wall() {
    let sc = wallbuild::scenario::Scenario::load(&scenario()).unwrap();
    assert_eq!(sc, wallbuild::scenario::full_mission());
}

#[test]
fn run_full_mission() {
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["run", "--scenario", scenario().to_str().unwrap(), "--seed", "1", "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.path().join("report.json"));
    assert_eq!(r["completed"], true);
    assert_eq!(r["bricks_placed"], 6);
    for f in ["trace.jsonl", "metrics.csv", "control.csv", "plans.csv"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
}

#[test]
fn missing_footprint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = read_json(&scenario());
    v.as_object_mut().unwrap().remove("footprint");
    let path = dir.path().join("bad.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let o = bin(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("footprint"));
}

#[test]
fn time_budget_gives_partial_metrics() {
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["run", "--scenario", scenario().to_str().unwrap(), "--max-sim-time", "20", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let r = read_json(&out.path().join("report.json"));
    assert_eq!(r["completed"], false);
    assert!((r["sim_time"].as_f64().unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn experiments_write_checked_reports() {
    for (cmd, noise) in [("exp-load", "off"), ("exp-unload", "field")] {
        let out = tempfile::tempdir().unwrap();
        let o = bin(&[cmd, "--runs", "2", "--seed", "5", "--noise", noise, "--out", out.path().to_str().unwrap()]);
        let text = fs::read_to_string(out.path().join("report.json")).unwrap();
        let rep = ExperimentReport::from_json(&text).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert_eq!(o.status.success(), rep.all_succeeded(), "{cmd}");
        assert_eq!(fs::read_to_string(out.path().join("metrics.csv")).unwrap().lines().count(), 3);
    }
}

#[test]
fn bad_noise_and_zero_runs_rejected() {
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["exp-load", "--runs", "1", "--noise", "loud", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["exp-load", "--runs", "0", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn snapshot_writes_images() {
    let out = tempfile::tempdir().unwrap();
    let sc = scenario();
    let args = ["snapshot", "--scenario", sc.to_str().unwrap(), "--base", "6.9,2.5,0", "--arm", "0.6,0,1.2,90,0", "--out"];
    let o = bin(&[&args[..], &[out.path().to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ppm = fs::read(out.path().join("label.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6"));
    assert!(fs::read(out.path().join("depth.pgm")).unwrap().starts_with(b"P5"));

    let file = tempfile::NamedTempFile::new().unwrap();
    let bad = file.path().join("x");
    let o = bin(&[&args[..], &[bad.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_same_trace_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = bin(&["run", "--scenario", scenario().to_str().unwrap(), "--seed", "3", "--noise", "field", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.code().is_some());
    }
    assert_eq!(fs::read(a.path().join("trace.jsonl")).unwrap(), fs::read(b.path().join("trace.jsonl")).unwrap());
}
