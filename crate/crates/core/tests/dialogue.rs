use std::sync::Arc;

use async_trait::async_trait;
use chrono::{TimeZone, Utc};
use sentinel_core::dialogue::{parse_decision, Awaiting, Decision, Engine, EngineConfig, EngineError, FixedClock};
use sentinel_core::domain::{parse_signature, AgentTurn, IocRecord, Role, SlotName, SourceId};
use sentinel_core::events::{EventKind, NullSink, VecSink};
use sentinel_core::executor::{ActionSettings, Executor, MockSiem, SiemCommand};
use sentinel_core::llm::{ChatBackend, CompletionRequest, LlmError, QueueBackend, RuleBasedBackend};
use sentinel_core::store::IocStore;

fn store() -> Arc<IocStore> {
    let store = IocStore::in_memory();
    let t = Utc.with_ymd_and_hms(2023, 1, 1, 12, 0, 0).unwrap();
    let rec = IocRecord::new(SourceId::AlienvaultOtx, parse_signature("130.231.4.98", None).unwrap(), t, t, "scanner", None, "{}").unwrap();
    store.upsert_records(vec![rec]).unwrap();
    Arc::new(store)
}

fn engine_with(backend: Arc<dyn ChatBackend>, siem: Arc<MockSiem>) -> Engine {
    let clock = Arc::new(FixedClock::new(Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()));
    Engine::new(backend, Executor::new(store(), siem, ActionSettings::default()), clock)
}

fn rules(siem: Arc<MockSiem>) -> Engine {
    engine_with(Arc::new(RuleBasedBackend), siem)
}

#[tokio::test]
async fn irrelevant_question_gets_a_reminder() {
    let e = rules(Arc::new(MockSiem::new()));
    let s0 = e.new_session("a").unwrap();
    assert_eq!(s0.history.len(), 1);
    assert_eq!(s0.history[0].role, Role::System);
    let (s1, turn) = e.next_turn(&s0, "How is the weather", &NullSink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Answer { retryable: false, .. }));
    assert_eq!(s1.awaiting, Awaiting::None);
    let roles: Vec<Role> = s1.history.iter().map(|m| m.role).collect();
    assert_eq!(roles, vec![Role::System, Role::User, Role::Assistant]);
}

#[tokio::test]
async fn missing_signature_is_asked_for_then_confirmed_and_run() {
    let siem = Arc::new(MockSiem::new());
    let e = rules(siem.clone());
    let sink = VecSink::new();
    let s0 = e.new_session("b").unwrap();
    let (s1, turn) = e.next_turn(&s0, "Block something", &sink).await.unwrap();
    match &turn {
        AgentTurn::Clarification { missing, .. } => assert_eq!(missing, &vec![SlotName::SignatureType, SlotName::SignatureValue]),
        other => panic!("{other:?}"),
    }
    assert_eq!(s1.awaiting, Awaiting::MissingSlots(vec![SlotName::SignatureType, SlotName::SignatureValue]));
    let (s2, turn) = e.next_turn(&s1, "the IP 130.231.4.98", &sink).await.unwrap();
    let AgentTurn::ConfirmationRequest { plan, summary } = turn else { panic!("{turn:?}") };
    assert!(summary.contains("130.231.4.98"));
    assert_eq!(plan[0].slots.signature_value.as_deref(), Some("130.231.4.98"));
    assert!(siem.calls().is_empty());
    let (s3, turn) = e.next_turn(&s2, "yes", &sink).await.unwrap();
    let AgentTurn::Result { payload, .. } = turn else { panic!("{turn:?}") };
    assert_eq!(payload["command_count"], 2);
    assert_eq!(siem.calls().len(), 2);
    assert_eq!(s3.awaiting, Awaiting::None);
    assert!(s3.pending_plan.is_none());
    let kinds = sink.kinds();
    let confirm = kinds.iter().rposition(|k| *k == EventKind::Confirmation).unwrap();
    let command = kinds.iter().position(|k| *k == EventKind::Command).unwrap();
    assert!(confirm < command);
}

#[tokio::test]
async fn denial_and_reasking_never_reach_the_siem() {
    let siem = Arc::new(MockSiem::new());
    let e = rules(siem.clone());
    let s0 = e.new_session("c").unwrap();
    let (s1, _) = e.next_turn(&s0, "Block 1.2.3.4", &NullSink).await.unwrap();
    assert_eq!(s1.awaiting, Awaiting::Confirmation);
    let (s2, turn) = e.next_turn(&s1, "Show me all attacks targeting TCP port 9000.", &NullSink).await.unwrap();
    assert!(matches!(turn, AgentTurn::ConfirmationRequest { .. }));
    assert_eq!(s2.awaiting, Awaiting::Confirmation);
    let (s3, turn) = e.next_turn(&s2, "no", &NullSink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Answer { .. }));
    assert_eq!(s3.awaiting, Awaiting::None);
    assert!(siem.calls().is_empty());
    assert_eq!(e.confirm(&s3, Decision::Affirm, &NullSink).await.unwrap_err(), EngineError::NothingPending);
}

#[tokio::test]
async fn confirm_control_matches_typed_answer() {
    let siem = Arc::new(MockSiem::new());
    let e = rules(siem.clone());
    let s0 = e.new_session("d").unwrap();
    let (s1, _) = e.next_turn(&s0, "Block the IP addresses within subnet 54.12.0.0/16", &NullSink).await.unwrap();
    let (s2, turn) = e.confirm(&s1, Decision::Affirm, &NullSink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Result { .. }));
    assert_eq!(s2.history.len(), 5);
    assert_eq!(
        siem.calls(),
        vec![
            SiemCommand::CdbAdd { list: "sentinel-blacklist".into(), key: "54.12.0.0/16".into(), value: "sentinel".into() },
            SiemCommand::ActiveResponseBlock { target: "54.12.0.0/16".into(), scope: Default::default() },
        ]
    );
}

#[tokio::test]
async fn auto_confirm_runs_without_asking() {
    let siem = Arc::new(MockSiem::new());
    let e = rules(siem.clone()).with_config(EngineConfig { auto_confirm: true, ..EngineConfig::default() });
    let sink = VecSink::new();
    let s0 = e.new_session("e").unwrap();
    let (_, turn) = e.next_turn(&s0, "Block 130.231.4.98 if it is malicious.", &sink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Result { .. }));
    assert_eq!(siem.calls().len(), 2);
    assert!(sink.events().iter().any(|(k, v)| *k == EventKind::Confirmation && v["decision"] == "auto"));
}

struct Down;

#[async_trait]
impl ChatBackend for Down {
    async fn complete(&self, _: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        Err(LlmError::BackendTimeout)
    }

    fn name(&self) -> &'static str {
        "down"
    }
}

#[tokio::test]
async fn transient_failure_leaves_state_unchanged() {
    let e = engine_with(Arc::new(Down), Arc::new(MockSiem::new()));
    let s0 = e.new_session("f").unwrap();
    let (s1, turn) = e.next_turn(&s0, "Block 1.2.3.4", &NullSink).await.unwrap();
    assert!(matches!(turn, AgentTurn::Answer { retryable: true, .. }));
    assert_eq!(s1, s0);
}

#[tokio::test]
async fn unlabeled_reply_is_retried_once_then_answered() {
    let q = QueueBackend::new([vec!["Sure, happy to help.".to_string()], vec!["Still no label here.".to_string()]]);
    let e = engine_with(Arc::new(q), Arc::new(MockSiem::new()));
    let sink = VecSink::new();
    let s0 = e.new_session("g").unwrap();
    let (_, turn) = e.next_turn(&s0, "hello", &sink).await.unwrap();
    assert_eq!(turn, AgentTurn::answer("Still no label here."));
    assert_eq!(sink.kinds().iter().filter(|k| **k == EventKind::LlmRequest).count(), 2);
}

#[tokio::test]
async fn unparseable_plan_asks_to_rephrase() {
    let q = QueueBackend::new([vec!["action ok".to_string()], vec!["I would block it.".to_string()]]);
    let e = engine_with(Arc::new(q), Arc::new(MockSiem::new()));
    let s0 = e.new_session("h").unwrap();
    let (s1, turn) = e.next_turn(&s0, "Block it", &NullSink).await.unwrap();
    assert!(matches!(&turn, AgentTurn::Clarification { missing, .. } if missing == &vec![SlotName::Intent]));
    assert_eq!(s1.awaiting, Awaiting::None);
}

#[tokio::test]
async fn conflicting_intent_offers_cancel() {
    let siem = Arc::new(MockSiem::new());
    let e = rules(siem.clone());
    let s0 = e.new_session("i").unwrap();
    let (s1, _) = e.next_turn(&s0, "Is this email address malicious: nobody", &NullSink).await.unwrap();
    assert!(matches!(s1.awaiting, Awaiting::MissingSlots(_)), "{:?}", s1.awaiting);
    let (s2, turn) = e.next_turn(&s1, "block it", &NullSink).await.unwrap();
    assert!(turn.text().contains("cancel"), "{}", turn.text());
    assert_eq!(s2.pending_plan, s1.pending_plan);
    let (s3, _) = e.next_turn(&s2, "cancel", &NullSink).await.unwrap();
    assert_eq!(s3.awaiting, Awaiting::None);
    assert!(siem.calls().is_empty());
}

#[test]
fn decisions() {
    for yes in ["yes", "Yes.", "y", "ok", "go ahead", "yes please", "Confirm!"] {
        assert_eq!(parse_decision(yes), Some(Decision::Affirm), "{yes}");
    }
    for no in ["no", "No!", "cancel", "don't", "no, wait"] {
        assert_eq!(parse_decision(no), Some(Decision::Deny), "{no}");
    }
    for other in ["maybe", "what will this do?", "", "block 1.2.3.4"] {
        assert_eq!(parse_decision(other), None, "{other}");
    }
}
