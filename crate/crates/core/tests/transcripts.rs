use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use sentinel_core::dialogue::{Awaiting, Engine, FixedClock};
use sentinel_core::domain::{AgentTurn, GeneralIntent, StepOutputRef};
use sentinel_core::events::{EventKind, VecSink};
use sentinel_core::executor::{ActionSettings, Executor, MockSiem};
use sentinel_core::llm::{parse_label, AuthoredScript, FixtureEntry, ScriptedBackend};
use sentinel_core::store::IocStore;
use sentinel_core::transcripts::{record_into, record_script};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/llm")
}

fn script() -> AuthoredScript {
    AuthoredScript::from_toml(&std::fs::read_to_string(fixtures().join("script.toml")).unwrap()).unwrap()
}

fn load_recorded() -> BTreeMap<String, FixtureEntry> {
    let mut out = BTreeMap::new();
    for item in std::fs::read_dir(fixtures().join("recorded")).unwrap() {
        let path = item.unwrap().path();
        let digest = path.file_stem().unwrap().to_str().unwrap().to_string();
        out.insert(digest, serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap());
    }
    out
}

#[tokio::test]
async fn recorded_fixtures_match_the_script() {
    if std::env::var("SENTINEL_UPDATE_FIXTURES").is_ok() {
        record_into(&script(), &fixtures().join("recorded")).await.unwrap();
    }
    let fresh = record_script(&script()).await.unwrap();
    assert_eq!(fresh, load_recorded(), "fixtures are stale; rerun with SENTINEL_UPDATE_FIXTURES=1");
}

#[tokio::test]
async fn replay_reaches_a_confirmation_for_the_guarded_block() {
    let backend = Arc::new(ScriptedBackend::load(&fixtures().join("recorded")).unwrap());
    let clock = Arc::new(FixedClock::new(Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()));
    let siem = Arc::new(MockSiem::new());
    let engine = Engine::new(backend, Executor::new(Arc::new(IocStore::in_memory()), siem.clone(), ActionSettings::default()), clock);
    let sink = VecSink::new();
    let s0 = engine.new_session("t").unwrap();
    let (s1, turn) = engine.next_turn(&s0, "Block 130.231.4.98 if it is malicious.", &sink).await.unwrap();
    let AgentTurn::ConfirmationRequest { plan, .. } = turn else { panic!("{turn:?}") };
    assert_eq!(plan.len(), 2);
    assert_eq!(plan[1].guard, Some(StepOutputRef::new(1, "found")));
    assert_eq!(s1.awaiting, Awaiting::Confirmation);
    let classifier = sink
        .events()
        .into_iter()
        .find(|(k, v)| *k == EventKind::LlmResponse && v["purpose"] == "intent-classifier")
        .unwrap();
    assert_eq!(parse_label(classifier.1["completions"][0].as_str().unwrap()).unwrap().label, GeneralIntent::Action);
    // the store is empty, so the guard is false and nothing reaches the SIEM
    let (_, turn) = engine.next_turn(&s1, "yes", &sink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Result { .. }));
    assert!(siem.calls().is_empty());
}
