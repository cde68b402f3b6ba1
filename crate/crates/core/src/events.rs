//! Pipeline events, written to the audit log and streamed to clients.

use std::fmt;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UserMsg,
    LlmRequest,
    LlmResponse,
    Plan,
    Clarification,
    Confirmation,
    Command,
    Report,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::UserMsg,
        EventKind::LlmRequest,
        EventKind::LlmResponse,
        EventKind::Plan,
        EventKind::Clarification,
        EventKind::Confirmation,
        EventKind::Command,
        EventKind::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::UserMsg => "user_msg",
            EventKind::LlmRequest => "llm_request",
            EventKind::LlmResponse => "llm_response",
            EventKind::Plan => "plan",
            EventKind::Clarification => "clarification",
            EventKind::Confirmation => "confirmation",
            EventKind::Command => "command",
            EventKind::Report => "report",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Receives events in the order they happen. Implementations must not block for long.
pub trait EventSink: Send + Sync {
    fn emit(&self, kind: EventKind, payload: Value);
}

/// Drops everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _: EventKind, _: Value) {}
}

/// Keeps every event in memory.
#[derive(Default)]
pub struct VecSink {
    events: Mutex<Vec<(EventKind, Value)>>,
}

impl VecSink {
    pub fn new() -> VecSink {
        VecSink::default()
    }

    pub fn events(&self) -> Vec<(EventKind, Value)> {
        self.events.lock().clone()
    }

    pub fn kinds(&self) -> Vec<EventKind> {
        self.events.lock().iter().map(|(k, _)| *k).collect()
    }

    pub fn clear(&self) {
        self.events.lock().clear();
    }
}

impl EventSink for VecSink {
    fn emit(&self, kind: EventKind, payload: Value) {
        self.events.lock().push((kind, payload));
    }
}

impl<T: EventSink + ?Sized> EventSink for std::sync::Arc<T> {
    fn emit(&self, kind: EventKind, payload: Value) {
        (**self).emit(kind, payload)
    }
}
