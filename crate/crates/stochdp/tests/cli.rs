//! End-to-end runs of the `stochdp` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stochdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochdp")).args(args).env_remove("STOCH_BELLMAN_THREADS").output().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Choose x0 before seeing ξ ∈ {0, 2}; pay (x0 - ξ)².
const TRACKING: &str = r#"{
  "problem": {"kind": "general", "dims": [1, 1]},
  "nodes": [
    {"id": "root", "parent": null, "prob": 1, "stage": 0},
    {"id": "lo", "parent": "root", "prob": "1/2", "stage": 1,
     "data": {"h": {"kind": "quadratic", "q": [[2, 0], [0, 0]], "lin": [0, 0], "c": 0}}},
    {"id": "hi", "parent": "root", "prob": "1/2", "stage": 1,
     "data": {"h": {"kind": "quadratic", "q": [[2, 0], [0, 0]], "lin": [-4, 0], "c": 4}}}
  ]
}"#;

#[test]
fn tracking_instance_splits_the_difference() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "tracking.json", TRACKING);
    let out = json_of(&stochdp(&["solve", "-i", &file, "--format", "structured"]));
    assert!((out["value"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
    let root = out["policy"].as_array().unwrap().iter().find(|row| row["node"] == "root").unwrap();
    assert!((root["x"][0].as_f64().unwrap() - 1.0).abs() <= 1e-12, "{root}");
    assert_eq!(out["details"]["verified"], Value::Bool(true));

    let text = String::from_utf8(stochdp(&["solve", "-i", &file]).stdout).unwrap();
    assert!(text.contains("value"), "{text}");
}

#[test]
fn malformed_mass_is_a_validation_error_naming_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TRACKING.replace(r#""id": "hi", "parent": "root", "prob": "1/2""#, r#""id": "hi", "parent": "root", "prob": "1/3""#);
    let file = write(dir.path(), "bad.json", &bad);
    let out = stochdp(&["solve", "-i", &file]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("root"), "{err}");
}

#[test]
fn missing_input_and_unknown_loss_exit_with_validation_code() {
    assert_eq!(stochdp(&["solve"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let market = stochdp(&["gen", "--kind", "market", "--horizon", "2"]);
    let file = write(dir.path(), "m.json", std::str::from_utf8(&market.stdout).unwrap());
    assert_eq!(stochdp(&["hedge", "-i", &file, "--loss", "cubic"]).status.code(), Some(2));
}

#[test]
fn structured_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gen = stochdp(&["gen", "--kind", "lagrange", "--seed", "7", "--horizon", "2"]);
    assert_eq!(gen.stdout, stochdp(&["gen", "--kind", "lagrange", "--seed", "7", "--horizon", "2"]).stdout);
    let file = write(dir.path(), "l.json", std::str::from_utf8(&gen.stdout).unwrap());
    for format in ["structured", "csv"] {
        let a = stochdp(&["solve", "-i", &file, "--format", format, "--threads", "1"]);
        let b = stochdp(&["solve", "-i", &file, "--format", format, "--threads", "4"]);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{format} output differs across thread counts");
    }
}

#[test]
fn csv_has_a_header_row() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "t.json", TRACKING);
    let out = stochdp(&["solve", "-i", &file, "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("node_id,stage"), "{header}");
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn oracle_agrees_on_generated_instances() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, seed) in [("lagrange", 1), ("lagrange", 2), ("lq", 3), ("lq", 4), ("market", 5), ("reward", 6)] {
        let gen = stochdp(&["gen", "--kind", kind, "--seed", &seed.to_string(), "--horizon", "2"]);
        let file = write(dir.path(), &format!("{kind}{seed}.json"), std::str::from_utf8(&gen.stdout).unwrap());
        let out = json_of(&stochdp(&["oracle", "-i", &file, "--format", "structured"]));
        let delta = out["compare"]["delta"].as_f64().unwrap();
        let dp = out["compare"]["dp"].as_f64().unwrap();
        assert!(delta <= 1e-8 * (1.0 + dp.abs()), "{kind} seed {seed}: delta {delta}");
        assert_eq!(out["compare"]["within_tol"], Value::Bool(true));
    }
}

#[test]
fn stop_reports_the_snell_value_and_stop_set() {
    let dir = tempfile::tempdir().unwrap();
    let gen = stochdp(&["gen", "--kind", "markov-reward", "--seed", "3", "--horizon", "3"]);
    let file = write(dir.path(), "r.json", std::str::from_utf8(&gen.stdout).unwrap());
    let out = json_of(&stochdp(&["stop", "-i", &file, "--format", "structured"]));
    assert!(out["value"].as_f64().is_some());
    assert!(out["details"]["stop_set"].as_array().is_some_and(|s| !s.is_empty()));
    assert!(out["details"]["psi"].is_array());
}

#[test]
fn always_up_market_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
      "problem": {"kind": "hedge"},
      "nodes": [
        {"id": "0", "parent": null, "prob": 1, "stage": 0, "data": {"s": [1]}},
        {"id": "u", "parent": "0", "prob": 0.5, "stage": 1, "data": {"s": [3], "c": 1}},
        {"id": "d", "parent": "0", "prob": 0.5, "stage": 1, "data": {"s": [2], "c": 0}}
      ]
    }"#;
    let file = write(dir.path(), "up.json", text);
    let out = json_of(&stochdp(&["check", "-i", &file, "--format", "structured"]));
    assert_eq!(out["assumption_report"]["pass"], Value::Bool(false));
    assert!(out["assumption_report"]["no_arbitrage"]["arbitrage"].is_array());
    // solving refuses unless arbitrage is explicitly allowed
    assert_eq!(stochdp(&["hedge", "-i", &file]).status.code(), Some(3));
}
