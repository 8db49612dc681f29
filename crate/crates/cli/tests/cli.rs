use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn policyguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_policyguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_fixture_file_exits_2() {
    let o = policyguard(&["replay", "--fixtures", "/nonexistent/suite.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn unknown_strategy_is_rejected() {
    let suite = fixtures().join("suite.json");
    let o = policyguard(&[
        "replay",
        "--fixtures",
        suite.to_str().unwrap(),
        "--strategy",
        "sideways",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let suite = fixtures().join("suite.json");
    let o = policyguard(&[
        "replay",
        "--fixtures",
        suite.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let table = stdout(&o);
    assert!(table.lines().next().unwrap().starts_with("Round"));
    assert!(table.contains("round 1"));
    assert!(table.contains("0.800"));

    let r = policyguard(&["report", "--input", out.join("report.json").to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(stdout(&r), table);

    let verdicts = std::fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 27);
    for line in verdicts.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn compare_lists_every_strategy() {
    let suite = fixtures().join("suite.json");
    let o = policyguard(&["compare", "--fixtures", suite.to_str().unwrap(), "--format", "machine"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for s in ["none", "current_step", "second_order_markov", "full_trajectory"] {
        assert!(text.contains(s), "{s} missing from\n{text}");
    }
}

#[test]
fn ingest_handbook_with_mock_backend() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("policies.json");
    let f = fixtures();
    let o = policyguard(&[
        "ingest",
        f.join("policy_handbook.md").to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--backend",
        &format!("mock:{}", f.join("ingest_script.json").display()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // Six drafts; the two purchase-confirmation rules merge into one.
    assert_eq!(report["extracted"], 6);
    assert_eq!(report["merged"], 1);
    assert_eq!(report["inserted"].as_array().unwrap().len(), 5);

    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&db).unwrap()).unwrap();
    let merged = saved["policies"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["source"].as_array().unwrap().len() == 2)
        .expect("merged policy keeps both spans");
    assert_eq!(merged["category"], "consent");

    // Ingesting the same document again only extends sources.
    let again = policyguard(&[
        "ingest",
        f.join("policy_handbook.md").to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
        "--backend",
        &format!("mock:{}", f.join("ingest_script.json").display()),
    ]);
    let report: Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert!(report["inserted"].as_array().unwrap().is_empty());
    assert_eq!(report["updated"].as_array().unwrap().len(), 5);
}

#[test]
fn example_config_loads() {
    let cfg = fixtures().join("guard.toml");
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("p.json");
    let o = policyguard(&[
        "--config",
        cfg.to_str().unwrap(),
        "ingest",
        fixtures().join("policy_handbook.md").to_str().unwrap(),
        "--db",
        db.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
