mod support;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use support::{core_fixtures, free_port, write_config, Service, BIN};

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("SENTINEL_CONFIG");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["query", "--colour", "red"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = run(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_fails_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), free_port());
    let out = run(&["query", "--last", "1y"], Some(&config));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("span"));
    let out = run(&["sync", "nowhere"], Some(&config));
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["query"], Some(&dir.path().join("missing.toml")));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sync_then_query_matches_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let config = write_config(dir.path(), port);
    let out = run(&["sync", "all"], Some(&config));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 5);
    for r in &reports {
        assert_eq!(r["normalized"].as_u64().unwrap() + r["rejected"].as_u64().unwrap(), r["fetched"].as_u64().unwrap());
    }

    let out = run(&["query", "--type", "ip", "--last", "24h"], Some(&config));
    assert!(out.status.success());
    let cli = String::from_utf8(out.stdout).unwrap();
    let parsed: Value = serde_json::from_str(&cli).unwrap();
    assert!(parsed["total_matched"].as_u64().unwrap() > 0, "{cli}");

    let svc = Service::start(&config, port);
    assert_eq!(svc.get("/api/iocs?type=ip&last=24h"), cli.trim_end());
}

#[test]
fn killed_service_keeps_committed_audit_and_store_writes() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let config = write_config(dir.path(), port);

    let svc = Service::start(&config, port);
    let id = svc.post("/api/sessions", Value::Null)["session_id"].as_str().unwrap().to_string();
    let turn = svc.post(&format!("/api/sessions/{id}/messages"), json!({"text": "Block 130.231.4.98"}));
    assert_eq!(turn["type"], "confirmation_request", "{turn}");
    let turn = svc.post(&format!("/api/sessions/{id}/confirm"), json!({"decision": "affirm"}));
    assert_eq!(turn["type"], "result", "{turn}");
    let synced = svc.post("/api/feeds/abuse-url/sync", Value::Null);
    assert_eq!(synced["results"][0]["status"], "synced");
    let turn = svc.post(&format!("/api/sessions/{id}/messages"), json!({"text": "Is 130.231.4.98 malicious?"}));
    assert_eq!(turn["type"], "result", "{turn}");
    let audit_before = svc.get("/api/audit");
    let iocs_before = svc.get("/api/iocs?source=abuse-url");
    let session_before = svc.get(&format!("/api/sessions/{id}"));
    svc.kill();

    let svc = Service::start(&config, port);
    assert_eq!(svc.get("/api/audit"), audit_before);
    assert_eq!(svc.get("/api/iocs?source=abuse-url"), iocs_before);
    assert_eq!(svc.get(&format!("/api/sessions/{id}")), session_before);
    let entries: Value = serde_json::from_str(&audit_before).unwrap();
    let n = entries["entries"].as_array().unwrap().len();
    assert!(n > 10, "{n}");

    // the log keeps growing from where it stopped
    let turn = svc.post(&format!("/api/sessions/{id}/messages"), json!({"text": "How is the weather"}));
    assert_eq!(turn["type"], "answer");
    let after: Value = serde_json::from_str(&svc.get("/api/audit")).unwrap();
    let seqs: Vec<u64> = after["entries"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    assert!(seqs.len() > n);
}

#[test]
fn fixtures_replay_prints_one_line_per_turn() {
    let llm = core_fixtures().join("llm");
    let out = run(
        &["fixtures", "replay", "--script", llm.join("script.toml").to_str().unwrap(), "--dir", llm.join("recorded").to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 15);
    assert!(lines.iter().all(|l| l["turn"]["type"].is_string()));

    let empty = tempfile::tempdir().unwrap();
    let out = run(&["fixtures", "replay", "--script", llm.join("script.toml").to_str().unwrap(), "--dir", empty.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}
