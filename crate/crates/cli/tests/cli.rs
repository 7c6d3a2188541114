use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bnucb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnucb"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "env = cosine\nhorizon = 50\ndim = 3\narms = 3\n\
                     algos = bnucb_fixed:5, uniform\nwidth = 4\ngd_steps = 5\nn_instances = 2\n";

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = bnucb(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "77",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "per_round.csv",
        "summary.csv",
        "batches.csv",
        "config.json",
        "diagnostics.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["master_seed"], 77);
}

#[test]
fn invalid_config_exits_one_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}width = 3\n"));
    let o = bnucb(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("width"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = bnucb(&[
        "run",
        "--config",
        "/nonexistent/x.cfg",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(bnucb(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bnucb(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(bnucb(&[]).status.code(), Some(2));
}

#[test]
fn ntk_emits_positive_effective_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "env = cosine\nalgos = uniform\nntk_subsample = 50\n",
    );
    let out = dir.path().join("ntk");
    let o = bnucb(&["ntk", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ntk.json")).unwrap()).unwrap();
    assert_eq!(summary["n_contexts"], 50);
    assert!(summary["d_tilde"].as_f64().unwrap() > 0.0);
    let gram = fs::read_to_string(out.join("ntk_gram.csv")).unwrap();
    assert_eq!(gram.lines().count(), 50);
}

#[test]
fn self_checks_pass() {
    let g = bnucb(&["grad-check", "--nets", "10"]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    let report: serde_json::Value = serde_json::from_slice(&g.stdout).unwrap();
    assert_eq!(report["passed"], true);
    let o = bnucb(&["oracle-check", "--mc-samples", "200000", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
}
