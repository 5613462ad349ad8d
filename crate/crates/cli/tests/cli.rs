use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hypkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypkg"))
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn eval_reports_fixture_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let labels = dir.path().join("labels.csv");
    std::fs::write(&pred, "visit_id,p1\nv0,0.9\nv1,0.8\nv2,0.3\nv3,0.1\n").unwrap();
    std::fs::write(&labels, "visit_id,l1\nv0,1\nv1,0\nv2,1\nv3,0\n").unwrap();
    let out = dir.path().join("report.json");
    let o = hypkg(&["eval", "--pred", p(&pred), "--labels", p(&labels), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["auroc"].as_f64().unwrap(), 0.75);
    assert!((report["aucpr"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(written, report);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = hypkg(&["eval", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failures_print_a_json_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let o = hypkg(&["eval", "--pred", p(&missing), "--labels", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    let line = String::from_utf8_lossy(&o.stderr);
    let record: Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert!(!record["error"]["message"].as_str().unwrap().is_empty());
}

#[test]
fn synth_then_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = hypkg(&["synth", "--out", p(dir.path()), "--visits", "120", "--attrs-per-cluster", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config = dir.path().join("config.toml");
    let output = dir.path().join("out");
    let o = hypkg(&["run", "--config", p(&config), "--epochs", "5", "--output", p(&output)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["auroc"]["mean"].as_f64().is_some());
    for f in ["manifest.json", "summary.json", "run_0/metrics.json", "run_0/checkpoint.json"] {
        assert!(output.join(f).exists(), "missing {f}");
    }
}

#[test]
fn run_without_config_fails() {
    let o = hypkg(&["run", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
