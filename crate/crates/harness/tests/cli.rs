use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn batchreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_batchreg")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CLEAN: &str = r#"{
  "problem": { "d": 4, "n": 8, "m": 100, "alpha": 1.0, "sigma": 0.0, "R": 8.0, "k": 2, "seed": 1 },
  "adversary": { "kind": "model", "model": { "kind": "gaussian-noise-batches" } },
  "beta_star": { "kind": "random", "norm": 4.0 },
  "driver": { "tau": 0.1 }
}"#;

const CHECKS: &str = r#"{
  "problem": { "d": 4, "n": 8, "m": 100, "alpha": 0.1, "sigma": 1.0, "R": 4.0, "k": 2, "seed": 2 },
  "adversary": { "kind": "decoy-offsets", "count": 2, "distance": 10.0 },
  "beta_star": { "kind": "axis", "norm": 1.0 },
  "checks": {
    "mz": { "instances": 10, "draws": 1000 },
    "cert": { "instances": 30 },
    "prune": { "instances": 5, "batches": 400 }
  }
}"#;

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn clean_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "clean.json", CLEAN);
    let out = dir.path().join("out");
    let o = batchreg(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert!(s["median_min_error"].as_f64().unwrap() <= 1e-3);
    assert_eq!(s["max_list_size"], 1);
    for f in ["run.csv", "manifest.json", "candidates.json", "events.jsonl", "config.json", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let events = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    for line in events.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["event"]["list_size"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn generate_then_run_on_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "clean.json", CLEAN);
    let out = dir.path().join("gen");
    let o = batchreg(&["generate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let ds = out.join("dataset.json");
    let o = batchreg(&["run", "--config", &cfg, "--dataset", ds.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["median_min_error"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn check_suites_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "checks.json", CHECKS);
    for cmd in ["mz-check", "cert-check", "prune-check"] {
        let out = dir.path().join(cmd);
        let o = batchreg(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(stdout_json(&o)["passed"], true);
        assert!(out.join(format!("{cmd}.json")).exists());
    }
}

#[test]
fn failed_check_exits_with_invariant_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = CHECKS.replace("\"batches\": 400", "\"batches\": 400, \"min_survival\": 1.5");
    let cfg = write(dir.path(), "checks.json", &text);
    let o = batchreg(&["prune-check", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn reduce_mode() {
    let dir = tempfile::tempdir().unwrap();
    let text = CLEAN
        .replace("\"n\": 8, \"m\": 100, \"alpha\": 1.0", "\"n\": 1, \"m\": 800, \"alpha\": 1.0")
        .replace("\"driver\"", "\"reduce\": { \"batch_size\": 8 },\n  \"driver\"");
    let cfg = write(dir.path(), "reduce.json", &text);
    let o = batchreg(&["reduce", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["batches"], 100);
    assert_eq!(s["alpha_batch"], 1.0);
    assert!(s["run"]["median_min_error"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(batchreg(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(4));
    let bad = write(dir.path(), "bad.json", &CLEAN.replace("\"k\": 2", "\"k\": 2, \"q\": 1"));
    assert_eq!(batchreg(&["run", "--config", &bad]).status.code(), Some(2));
    let bad = write(dir.path(), "bad2.json", "not json");
    assert_eq!(batchreg(&["sweep", "--config", &bad]).status.code(), Some(2));
}
