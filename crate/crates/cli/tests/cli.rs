use std::path::Path;
use std::process::{Command, Output};

use dscfl::harness::{ChannelMode, DatasetKind, RunConfig, Scenario};

fn dscfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dscfl")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let mut cfg = RunConfig::desk(4);
    cfg.dataset = DatasetKind::Quadratic;
    cfg.scenario = Scenario::Dsc;
    cfg.channel = ChannelMode::Ideal;
    cfg.rounds = 8;
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_bound_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run_dir = dir.path().join("dsc");
    let run_str = run_dir.to_str().unwrap();

    let stdout = ok(&dscfl(&["run", "--config", &config, "--out", run_str]));
    assert!(stdout.starts_with("dsc: 8 rounds"), "{stdout}");
    for f in ["metrics.csv", "groups.json", "config.json"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }

    let stdout = ok(&dscfl(&["bound", "--trace", run_str]));
    assert!(stdout.contains("A = "), "{stdout}");
    let bound: serde_json::Value = serde_json::from_slice(&std::fs::read(run_dir.join("bound.json")).unwrap()).unwrap();
    assert_eq!(bound["rows"].as_array().unwrap().len(), 9);

    let stdout = ok(&dscfl(&["report", "--in", run_str, "--format", "csv"]));
    assert!(Path::new(stdout.trim()).is_file(), "{stdout}");
}

#[test]
fn cluster_prints_groups_covering_every_client() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let stdout = ok(&dscfl(&["cluster", "--config", &config, "--scenario", "comm-only"]));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let structure = &v["groups"];
    let k = structure["num_clients"].as_u64().unwrap();
    let mut seen: Vec<u64> = structure["groups"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|g| g["members"].as_array().unwrap().iter().map(|m| m.as_u64().unwrap()))
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..k).collect::<Vec<_>>());
}

#[test]
fn missing_config_fails_with_context() {
    let out = dscfl(&["run", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading config"));
}
