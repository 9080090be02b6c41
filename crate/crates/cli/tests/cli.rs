use std::path::PathBuf;
use std::process::{Command, Output};

use defl_core::harness::{HEADER, SUMMARY_HEADER};

fn defl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defl")).args(args).output().expect("spawn defl")
}

fn sample(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn first_line(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["quadratic-small.json", "n4-fedavg.json", "sign-flip-2-multikrum.json"] {
        let out = defl(&["validate", "--config", sample(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn validate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(sample("quadratic-small.json")).unwrap().replace("\"f\": 1", "\"f\": 2");
    std::fs::write(&path, text).unwrap();
    let out = defl(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_config_fails() {
    let out = defl(&["validate", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
}

#[test]
fn run_writes_csv_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.csv");
    let cfg = sample("quadratic-small.json");
    let out = defl(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(first_line(&out_path), HEADER.join(","));
    let mut reader = csv::Reader::from_path(&out_path).unwrap();
    let seeds: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(seeds.len(), 10);
    assert!(seeds.iter().all(|s| s == "7"));

    let again = dir.path().join("again.csv");
    defl(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn run_without_output_path_fails() {
    let out = defl(&["run", "--config", sample("n4-fedavg.json").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn scenario_writes_per_config_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = defl(&["scenario", "--name", "scale-sweep", "--out-dir", dir.path().to_str().unwrap(), "--seeds", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for n in [4, 7, 10] {
        for rule in ["FEDAVG", "MULTI_KRUM"] {
            let p = dir.path().join(format!("n{n}_{rule}.csv"));
            assert_eq!(first_line(&p), HEADER.join(","), "{}", p.display());
        }
    }
    let summary = dir.path().join("summary.csv");
    assert_eq!(first_line(&summary), SUMMARY_HEADER.join(","));
    assert_eq!(std::fs::read_to_string(&summary).unwrap().lines().count(), 7);
}

#[test]
fn unknown_scenario_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = defl(&["scenario", "--name", "nope", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("attack-sweep"));
}

#[test]
fn config_output_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = defl(&["config", "--name", "byzantine-rate-sweep", "--index", "8"]);
    assert!(out.status.success());
    let path = dir.path().join("c.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let v = defl(&["validate", "--config", path.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("7+3/FEDAVG"));
    assert!(!defl(&["config", "--name", "scale-sweep", "--index", "99"]).status.success());
}
