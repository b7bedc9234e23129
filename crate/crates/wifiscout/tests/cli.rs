use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use wifiscout_core::store::SyncPolicy;
use wifiscout_core::{AdvisoryStore, RewardConfig};

fn wifiscout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wifiscout"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_csv(path: &Path, rows: &[&str]) {
    let mut text = String::from("ssid,lat,lon,street_address,floor,room,operator\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn import_reports_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("hotspots.csv");
    write_csv(
        &csv,
        &[
            "Wireless@SG,1.3521,103.8198,1 Raffles Place,,,M1",
            "Library,1.2966,103.8542,\"100 Victoria St, Level 5\",5,,NLB",
            "Broken,91.0,103.0,Nowhere,,,X",
            "Short,1.3",
        ],
    );
    let data = dir.path().join("data");
    let data = data.to_str().unwrap();

    let out = wifiscout(&["import", csv.to_str().unwrap(), "--data-dir", data]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out), "imported=2 errors=2\n");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 4"), "{stderr}");
    assert!(stderr.contains("line 5"), "{stderr}");

    let again = wifiscout(&["import", csv.to_str().unwrap(), "--data-dir", data]);
    assert_eq!(stdout(&again), "imported=0 errors=2\n");

    let store = AdvisoryStore::open(Path::new(data).join("events.log"), RewardConfig::default(), SyncPolicy::Manual)
        .unwrap();
    assert_eq!(store.state().ap_count(), 2);
    assert!(store.state().access_point("ext:0ba42c5af5136e21").is_some());
}

#[test]
fn import_with_wrong_header_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "name,lat,lon\nx,1,2\n").unwrap();
    let out = wifiscout(&["import", csv.to_str().unwrap(), "--data-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stdout(&out).is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("header"));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let args = ["simulate", "--seed", "9", "--users", "6", "--aps", "12", "--days", "5"];
    let a = wifiscout(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, wifiscout(&args).stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["users"], 6);
    assert_eq!(report["leaderboard"].as_array().unwrap().len(), 6);
    let other = wifiscout(&["simulate", "--seed", "10", "--users", "6", "--aps", "12", "--days", "5"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn simulate_writes_a_replayable_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("sim.log");
    let log_arg = log.to_str().unwrap();
    let out = wifiscout(&["simulate", "--seed", "3", "--users", "4", "--aps", "8", "--days", "3", "--events-out", log_arg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();

    let store = AdvisoryStore::open(&log, RewardConfig::default(), SyncPolicy::Manual).unwrap();
    let board = serde_json::to_value(store.state().ledger().leaderboard(usize::MAX)).unwrap();
    assert_eq!(board, report["leaderboard"]);

    let refused = wifiscout(&["simulate", "--seed", "3", "--events-out", log_arg]);
    assert!(!refused.status.success());
}

#[test]
fn config_file_changes_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("wifiscout.toml");
    std::fs::write(&config, "starting_points = 7\nfull_reward = 20\n").unwrap();
    let out = wifiscout(&["--config", config.to_str().unwrap(), "simulate", "--seed", "42", "--script", "overtaking"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["reward_histogram"]["first_review"]["points"], 40);

    std::fs::write(&config, "full_reward = 3\n").unwrap();
    let bad = wifiscout(&["--config", config.to_str().unwrap(), "simulate", "--seed", "1"]);
    assert!(!bad.status.success());
}
