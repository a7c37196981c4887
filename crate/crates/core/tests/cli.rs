use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freekummer")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn fk_support_example() {
    let out = run(&["fk", "support", "--alpha", "4", "--beta", "0", "--gamma", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["command"], "fk support");
    assert_eq!(v["seed"], 0);
    assert!(v["version"].is_string());
    assert!((v["results"]["a"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["results"]["b"].as_f64().unwrap() - 9.0).abs() < 1e-12);
}

#[test]
fn characterize_from_constants() {
    let model = json(&run(&["characterize", "--model", "4,1,2"]));
    let alpha1 = model["results"]["inputs"]["alpha1"].as_f64().unwrap();
    let a1 = format!("{alpha1:?}");
    let out = run(&["characterize", "--abar", "2", "--bbar", "2/3", "--a", "2.5", "--alpha1", &a1]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["tolerances_met"], true);
    let r = &v["results"];
    assert!((r["gamma"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    assert!((r["x_law"]["alpha"].as_f64().unwrap() - 4.0).abs() < 1e-8);
    assert!((r["x_law"]["beta"].as_f64().unwrap() - 5.0).abs() < 1e-8);
    assert!((r["y_law"]["jump"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    assert!((r["y_law"]["rate"].as_f64().unwrap() - 5.0).abs() < 1e-8);
}

#[test]
fn rounded_bbar_splits_the_double_root() {
    let out = run(&["characterize", "--abar", "2", "--bbar", "0.6666667", "--a", "2.5", "--alpha1", "1.406153194020944"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E2:"));
}

#[test]
fn precondition_is_a_usage_error() {
    let out = run(&["characterize", "--abar", "1", "--bbar", "0.5", "--a", "2", "--alpha1", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E1:"));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = run(&["fk", "support", "--alpha", "4", "--beta", "0", "--gamma", "1", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("E1:") && err.contains("Usage"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn csv_density_table_is_self_describing() {
    let out = run(&["fk", "density", "--alpha", "4", "--beta", "5", "--gamma", "2", "--points", "11", "--format", "csv", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# command: fk density"));
    assert!(text.contains("# seed: 3"));
    assert!(text.contains("# alpha: 4.0"));
    assert!(text.starts_with("# freekummer "));
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "x,value");
    assert_eq!(body.len(), 12);
}

#[test]
fn failed_tolerance_exits_three() {
    // N = 4 is far from the limit
    let out = run(&["verify", "hv-law", "--n", "4", "--reps", "20", "--burn-in", "200"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E3:"));
    assert_eq!(json(&out)["tolerances_met"], false);
}

#[test]
fn s_step_passes() {
    let out = run(&["verify", "s-step"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["results"]["max_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn exact_cumulants() {
    let v = json(&run(&["cumulants", "--moments", "1,2,5", "--exact"]));
    assert_eq!(v["results"]["cumulants"], serde_json::json!(["1", "1", "1"]));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["simulate", "kummer", "--a", "30", "--b", "5", "--c", "12", "--n", "24", "--reps", "3", "--burn-in", "300", "--seed", "17"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let mut other = args.to_vec();
    *other.last_mut().unwrap() = "18";
    assert_ne!(run(&other).stdout, a.stdout);
}
