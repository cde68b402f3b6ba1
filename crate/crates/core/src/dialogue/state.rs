use serde::{Deserialize, Serialize};

use crate::domain::{ChatMessage, PlanStep, SlotName};

use super::TrackedSlots;

/// What the engine waits for from the next user message.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slots", rename_all = "snake_case")]
pub enum Awaiting {
    #[default]
    None,
    MissingSlots(Vec<SlotName>),
    Confirmation,
}

/// Everything one conversation carries between turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogState {
    pub session_id: String,
    /// System prompt first, then alternating user and assistant messages.
    pub history: Vec<ChatMessage>,
    /// Slots gathered so far for the step at `current_step`.
    pub accumulated: TrackedSlots,
    pub pending_plan: Option<Vec<PlanStep>>,
    pub current_step: Option<u32>,
    pub awaiting: Awaiting,
    /// Number of user messages handled.
    pub turn: u64,
}

impl DialogState {
    pub fn new(session_id: impl Into<String>, system: ChatMessage) -> DialogState {
        DialogState {
            session_id: session_id.into(),
            history: vec![system],
            accumulated: TrackedSlots::default(),
            pending_plan: None,
            current_step: None,
            awaiting: Awaiting::None,
            turn: 0,
        }
    }

    /// Drops any plan in progress; history is kept.
    pub fn reset_plan(&mut self) {
        self.accumulated = TrackedSlots::default();
        self.pending_plan = None;
        self.current_step = None;
        self.awaiting = Awaiting::None;
    }

    pub fn current(&self) -> Option<&PlanStep> {
        let n = self.current_step? as usize;
        self.pending_plan.as_ref()?.get(n.checked_sub(1)?)
    }
}
