//! Turn orchestration: classify, plan, extract per step, clarify, confirm, execute.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::domain::{
    plan_is_destructive, ActionIntent, AgentTurn, ChatMessage, GeneralIntent, PlanStep, Role, SignatureType, SlotName,
};
use crate::events::{EventKind, EventSink};
use crate::executor::{check_plan, compile_query, summarize_report, Executor};
use crate::llm::{complete, parse_label, vote, ChatBackend, CompletionRequest, LabeledResponse, LlmError, PromptId, TemplateError, Templates};

use super::{merge, missing_slots, parse_plan, parse_slots, resolve_relative, Awaiting, Clock, DialogState, MergeError, Provenance, SlotDelta, TrackedSlots};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("message is empty")]
    EmptyMessage,
    #[error("no plan is waiting for confirmation")]
    NothingPending,
}

impl EngineError {
    fn is_transient(&self) -> bool {
        matches!(self, EngineError::Llm(e) if e.is_transient())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Affirm,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Run Block/Unblock plans without asking first.
    pub auto_confirm: bool,
    /// Most recent messages sent along with the classifier prompt.
    pub history_window: usize,
    pub extract_samples: u32,
    pub extract_temperature: f64,
    pub max_output: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { auto_confirm: false, history_window: 20, extract_samples: 3, extract_temperature: 0.7, max_output: 1024 }
    }
}

const LABEL_REMINDER: &str = "Begin your reply with exactly one of the words irrelevant, cybersecurity, query or action.";

const AFFIRM: [&str; 15] =
    ["yes", "y", "yep", "yeah", "sure", "ok", "okay", "confirm", "confirmed", "proceed", "approve", "approved", "affirmative", "go ahead", "do it"];
const DENY: [&str; 11] = ["no", "n", "nope", "cancel", "deny", "denied", "abort", "stop", "reject", "don't", "do not"];
const CANCEL: [&str; 6] = ["cancel", "never mind", "nevermind", "forget it", "stop", "abort"];

fn normalized(text: &str) -> String {
    text.trim().trim_end_matches(['.', '!', '?']).trim().to_lowercase()
}

/// Reads a yes/no answer; anything else is `None`.
pub fn parse_decision(text: &str) -> Option<Decision> {
    let t = normalized(text);
    let first = t.split([' ', ',']).next().unwrap_or("");
    let hit = |set: &[&str]| set.contains(&t.as_str()) || set.iter().any(|w| !w.contains(' ') && *w == first);
    match (hit(&AFFIRM), hit(&DENY)) {
        (true, false) => Some(Decision::Affirm),
        (false, true) => Some(Decision::Deny),
        _ => None,
    }
}

fn slot_phrase(slot: SlotName) -> &'static str {
    match slot {
        SlotName::Intent => "what you want to do",
        SlotName::SignatureType => "the indicator type (IP, subnet, email, hash, URL or port)",
        SlotName::SignatureValue => "the indicator value",
        SlotName::FromDate => "a start date",
        SlotName::ToDate => "an end date",
        SlotName::Quantity => "how many results you want",
    }
}

fn clarification_text(step: &PlanStep, missing: &[SlotName]) -> String {
    let intent = step.intent().map_or("continue", ActionIntent::as_str);
    if step.intent() == Some(ActionIntent::Search) && missing.len() > 2 {
        return format!("To search (\"{}\") I need an indicator type and value, a time range, or a number of results.", step.description);
    }
    let wanted: Vec<&str> = missing.iter().map(|s| slot_phrase(*s)).collect();
    format!("To {intent} (\"{}\") I still need {}.", step.description, wanted.join(" and "))
}

fn describe_step(step: &PlanStep) -> String {
    let intent = step.intent().map_or("?", ActionIntent::as_str);
    let target = if step.intent().is_some_and(ActionIntent::is_destructive) {
        match (step.slots.bindings.get(&SlotName::SignatureValue), step.slots.signature_type, &step.slots.signature_value) {
            (Some(r), _, _) => format!("every indicator in {r}"),
            (None, Some(k), Some(v)) => format!("{k} {v}"),
            _ => step.description.clone(),
        }
    } else {
        compile_query(&step.slots).map(|f| f.describe()).unwrap_or_else(|_| step.description.clone())
    };
    let mut line = format!("{}. {intent} {target}", step.ordinal);
    if let Some(g) = &step.guard {
        line.push_str(&format!(", only if {g}"));
    }
    line
}

fn describe_plan(plan: &[PlanStep]) -> String {
    let mut out = String::from("I am about to run this plan:\n");
    for s in plan {
        out.push_str(&describe_step(s));
        out.push('\n');
    }
    out.push_str("Reply yes to run it or no to cancel.");
    out
}

fn prior_steps_text(prior: &[PlanStep]) -> String {
    if prior.is_empty() {
        return "none".into();
    }
    prior.iter().map(|s| format!("{}. {}: {}", s.ordinal, s.intent().map_or("?", ActionIntent::as_str), s.description)).collect::<Vec<_>>().join("\n")
}

pub struct Engine {
    backend: Arc<dyn ChatBackend>,
    templates: Templates,
    executor: Executor,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(backend: Arc<dyn ChatBackend>, executor: Executor, clock: Arc<dyn Clock>) -> Engine {
        Engine { backend, templates: Templates::default(), executor, clock, config: EngineConfig::default() }
    }

    pub fn with_templates(mut self, templates: Templates) -> Engine {
        self.templates = templates;
        self
    }

    pub fn with_config(mut self, config: EngineConfig) -> Engine {
        self.config = config;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn new_session(&self, session_id: impl Into<String>) -> Result<DialogState, EngineError> {
        Ok(DialogState::new(session_id, self.templates.render_intent(self.clock.now())?))
    }

    /// Handles one user message. `state` is never modified; the new state is returned.
    ///
    /// A transient model failure returns `state` unchanged with a retryable answer.
    pub async fn next_turn(&self, state: &DialogState, user_msg: &str, sink: &dyn EventSink) -> Result<(DialogState, AgentTurn), EngineError> {
        let now = self.clock.now();
        let msg = ChatMessage::new(Role::User, user_msg, now).map_err(|_| EngineError::EmptyMessage)?;
        let mut st = state.clone();
        st.turn += 1;
        st.history.push(msg);
        sink.emit(EventKind::UserMsg, json!({"session": st.session_id, "turn": st.turn, "text": user_msg}));
        let outcome = match st.awaiting {
            Awaiting::Confirmation => Ok(self.on_confirmation(&mut st, user_msg, sink).await),
            Awaiting::MissingSlots(_) => self.on_slot_fill(&mut st, user_msg, now, sink).await,
            Awaiting::None => self.on_request(&mut st, user_msg, now, sink).await,
        };
        match outcome {
            Ok(turn) => Ok(self.finish(st, turn, now, sink)),
            Err(e) if e.is_transient() => {
                let text = format!("{e}. Nothing was changed; please send the message again.");
                Ok((state.clone(), AgentTurn::Answer { text, retryable: true }))
            }
            Err(e) => Err(e),
        }
    }

    /// Resolves a pending confirmation without keyword parsing.
    pub async fn confirm(&self, state: &DialogState, decision: Decision, sink: &dyn EventSink) -> Result<(DialogState, AgentTurn), EngineError> {
        if state.awaiting != Awaiting::Confirmation {
            return Err(EngineError::NothingPending);
        }
        let now = self.clock.now();
        let text = match decision {
            Decision::Affirm => "yes",
            Decision::Deny => "no",
        };
        let mut st = state.clone();
        st.turn += 1;
        st.history.push(ChatMessage::new(Role::User, text, now).expect("nonempty"));
        sink.emit(EventKind::UserMsg, json!({"session": st.session_id, "turn": st.turn, "text": text, "via": "control"}));
        let turn = self.resolve(&mut st, decision, sink).await;
        Ok(self.finish(st, turn, now, sink))
    }

    fn finish(&self, mut st: DialogState, turn: AgentTurn, now: DateTime<Utc>, sink: &dyn EventSink) -> (DialogState, AgentTurn) {
        if let AgentTurn::Clarification { text, missing } = &turn {
            sink.emit(EventKind::Clarification, json!({"session": st.session_id, "text": text, "missing": missing}));
        }
        let text = if turn.text().trim().is_empty() { "(no answer)" } else { turn.text() };
        st.history.push(ChatMessage::new(Role::Assistant, text, now).expect("nonempty"));
        (st, turn)
    }

    async fn call(
        &self,
        id: PromptId,
        messages: Vec<ChatMessage>,
        temperature: f64,
        samples: u32,
        sink: &dyn EventSink,
    ) -> Result<Vec<String>, EngineError> {
        let req = CompletionRequest::new(messages, temperature, samples, self.config.max_output).for_prompt(id);
        let digest = req.digest();
        let wire: Vec<_> = req.messages.iter().map(|m| json!({"role": m.role, "content": m.content})).collect();
        sink.emit(
            EventKind::LlmRequest,
            json!({"purpose": id, "digest": digest, "temperature": temperature, "sample_count": samples, "messages": wire}),
        );
        match complete(self.backend.as_ref(), &req).await {
            Ok(out) => {
                sink.emit(EventKind::LlmResponse, json!({"purpose": id, "digest": digest, "completions": out}));
                Ok(out)
            }
            Err(e) => {
                sink.emit(EventKind::LlmResponse, json!({"purpose": id, "digest": digest, "error": e.to_string()}));
                Err(e.into())
            }
        }
    }

    async fn classify(&self, st: &DialogState, now: DateTime<Utc>, sink: &dyn EventSink) -> Result<LabeledResponse, EngineError> {
        let convo = &st.history[1..];
        let convo = &convo[convo.len().saturating_sub(self.config.history_window)..];
        let mut messages = vec![self.templates.render_intent(now)?];
        messages.extend(convo.iter().cloned());
        let first = self.call(PromptId::IntentClassifier, messages.clone(), 0.0, 1, sink).await?;
        if let Ok(l) = parse_label(&first[0]) {
            return Ok(l);
        }
        messages.push(ChatMessage::new(Role::User, LABEL_REMINDER, now).expect("nonempty"));
        let second = self.call(PromptId::IntentClassifier, messages, 0.0, 1, sink).await?;
        Ok(parse_label(&second[0]).unwrap_or(LabeledResponse { label: GeneralIntent::Cybersecurity, body: second[0].trim().to_string() }))
    }

    /// Voted extraction for one step. Relative dates found in `time_texts`
    /// replace whatever window the model proposed for a Search step.
    async fn extract(
        &self,
        text: &str,
        intent: ActionIntent,
        prior: &[PlanStep],
        time_texts: &[&str],
        now: DateTime<Utc>,
        sink: &dyn EventSink,
    ) -> Result<SlotDelta, EngineError> {
        let system = self.templates.render(
            PromptId::SlotExtractor,
            now,
            &[("intent", intent.as_str().to_string()), ("prior_steps", prior_steps_text(prior))],
        )?;
        let user = ChatMessage::new(Role::User, text, now).map_err(|_| EngineError::EmptyMessage)?;
        let samples = self.call(PromptId::SlotExtractor, vec![system, user], self.config.extract_temperature, self.config.extract_samples, sink).await?;
        let parsed: Vec<_> = samples.iter().filter_map(|s| parse_slots(s).ok()).collect();
        let mut delta = SlotDelta::from_extraction(vote(&parsed).unwrap_or_default());
        let lists_ips = delta.slots.bindings.get(&SlotName::SignatureValue).is_some_and(|r| r.output_name == "list_ip");
        if lists_ips && delta.slots.signature_type.is_none() {
            delta.slots.signature_type = Some(SignatureType::Ip);
            delta.provenance.insert(SlotName::SignatureType, Provenance::Inferred);
        }
        if intent == ActionIntent::Search {
            if let Some(w) = time_texts.iter().find_map(|t| resolve_relative(t, now)) {
                delta.infer_window(w);
            }
        }
        Ok(delta)
    }

    async fn on_request(&self, st: &mut DialogState, user_msg: &str, now: DateTime<Utc>, sink: &dyn EventSink) -> Result<AgentTurn, EngineError> {
        let labeled = self.classify(st, now, sink).await?;
        if matches!(labeled.label, GeneralIntent::Irrelevant | GeneralIntent::Cybersecurity) {
            let body = if labeled.body.is_empty() { "I can only help with security questions and operations.".to_string() } else { labeled.body };
            return Ok(AgentTurn::answer(body));
        }
        let system = self.templates.render(PromptId::StepPlanner, now, &[])?;
        let user = ChatMessage::new(Role::User, user_msg, now).map_err(|_| EngineError::EmptyMessage)?;
        let completion = self.call(PromptId::StepPlanner, vec![system, user], 0.0, 1, sink).await?;
        let plan = match parse_plan(&completion[0]) {
            Ok(p) => p,
            Err(e) => {
                tracing::debug!(error = %e, "plan completion did not parse");
                return Ok(AgentTurn::clarification(
                    "I could not break that request into steps. Could you rephrase it, naming the indicator and what to do with it?",
                    vec![SlotName::Intent],
                )
                .expect("nonempty"));
            }
        };
        sink.emit(EventKind::Plan, json!({"stage": "planned", "steps": plan}));
        st.pending_plan = Some(plan);
        st.current_step = Some(1);
        st.accumulated = TrackedSlots::default();
        self.fill_steps(st, user_msg, now, sink).await
    }

    async fn on_slot_fill(&self, st: &mut DialogState, user_msg: &str, now: DateTime<Utc>, sink: &dyn EventSink) -> Result<AgentTurn, EngineError> {
        if CANCEL.contains(&normalized(user_msg).as_str()) {
            st.reset_plan();
            return Ok(AgentTurn::answer("Cancelled the pending request."));
        }
        let (Some(step), Some(plan)) = (st.current().cloned(), st.pending_plan.clone()) else {
            st.reset_plan();
            return self.on_request(st, user_msg, now, sink).await;
        };
        let intent = step.intent().expect("planned steps carry an intent");
        let prior = &plan[..(step.ordinal - 1) as usize];
        let delta = self.extract(user_msg, intent, prior, &[user_msg], now, sink).await?;
        match merge(&st.accumulated, &delta, st.turn) {
            Err(MergeError::ConflictingIntent { current, proposed }) => {
                let missing = match &st.awaiting {
                    Awaiting::MissingSlots(m) => m.clone(),
                    _ => missing_slots(&st.accumulated.slots),
                };
                let text = format!(
                    "We are in the middle of a {current} request, but this message asks to {proposed}. Give the missing details, or say \"cancel\" to drop the {current} request."
                );
                Ok(AgentTurn::clarification(text, missing).expect("awaiting slots"))
            }
            Ok(merged) if merged.slots == st.accumulated.slots => {
                // nothing filled in: treat it as a new request
                st.reset_plan();
                self.on_request(st, user_msg, now, sink).await
            }
            Ok(merged) => {
                st.accumulated = merged;
                self.fill_steps(st, user_msg, now, sink).await
            }
        }
    }

    async fn fill_steps(&self, st: &mut DialogState, user_msg: &str, now: DateTime<Utc>, sink: &dyn EventSink) -> Result<AgentTurn, EngineError> {
        let mut plan = st.pending_plan.clone().expect("fill_steps needs a plan");
        while let Some(ord) = st.current_step {
            let idx = (ord - 1) as usize;
            let Some(step) = plan.get(idx).cloned() else { break };
            let intent = step.intent().expect("planned steps carry an intent");
            if st.accumulated.slots.intent.is_none() {
                let mut delta = self.extract(&step.description, intent, &plan[..idx], &[&step.description, user_msg], now, sink).await?;
                delta.set_intent(intent);
                st.accumulated = merge(&TrackedSlots::default(), &delta, st.turn).expect("empty slots cannot conflict");
            }
            let missing = missing_slots(&st.accumulated.slots);
            if !missing.is_empty() {
                st.pending_plan = Some(plan);
                st.awaiting = Awaiting::MissingSlots(missing.clone());
                return Ok(AgentTurn::clarification(clarification_text(&step, &missing), missing).expect("nonempty"));
            }
            plan[idx].slots = st.accumulated.slots.clone();
            st.accumulated = TrackedSlots::default();
            st.current_step = Some(ord + 1);
        }
        st.pending_plan = Some(plan.clone());
        st.current_step = None;
        st.awaiting = Awaiting::None;
        if let Err(e) = check_plan(&plan) {
            st.reset_plan();
            return Ok(AgentTurn::answer(format!("I could not build a valid plan for that request ({e}). Please rephrase it.")));
        }
        sink.emit(EventKind::Plan, json!({"stage": "complete", "steps": plan}));
        if !plan_is_destructive(&plan) {
            st.reset_plan();
            return Ok(self.execute(&plan, sink).await);
        }
        if self.config.auto_confirm {
            sink.emit(EventKind::Confirmation, json!({"session": st.session_id, "decision": "auto", "steps": plan}));
            st.reset_plan();
            return Ok(self.execute(&plan, sink).await);
        }
        st.current_step = plan.iter().find(|s| s.intent().is_some_and(ActionIntent::is_destructive)).map(|s| s.ordinal);
        st.awaiting = Awaiting::Confirmation;
        sink.emit(EventKind::Confirmation, json!({"session": st.session_id, "decision": "requested", "steps": plan}));
        Ok(AgentTurn::confirmation(describe_plan(&plan), plan).expect("plan is destructive"))
    }

    async fn on_confirmation(&self, st: &mut DialogState, user_msg: &str, sink: &dyn EventSink) -> AgentTurn {
        match parse_decision(user_msg) {
            Some(d) => self.resolve(st, d, sink).await,
            None => {
                let plan = st.pending_plan.clone().expect("awaiting confirmation");
                sink.emit(EventKind::Confirmation, json!({"session": st.session_id, "decision": "requested", "steps": plan, "reask": true}));
                let summary = format!("Please answer yes or no first.\n{}", describe_plan(&plan));
                AgentTurn::confirmation(summary, plan).expect("plan is destructive")
            }
        }
    }

    async fn resolve(&self, st: &mut DialogState, decision: Decision, sink: &dyn EventSink) -> AgentTurn {
        let plan = st.pending_plan.clone().expect("awaiting confirmation");
        st.reset_plan();
        match decision {
            Decision::Affirm => {
                sink.emit(EventKind::Confirmation, json!({"session": st.session_id, "decision": "affirmed", "steps": plan}));
                self.execute(&plan, sink).await
            }
            Decision::Deny => {
                sink.emit(EventKind::Confirmation, json!({"session": st.session_id, "decision": "denied"}));
                AgentTurn::answer("Cancelled. Nothing was sent to the SIEM.")
            }
        }
    }

    async fn execute(&self, plan: &[PlanStep], sink: &dyn EventSink) -> AgentTurn {
        match self.executor.execute(plan, sink).await {
            Ok(report) => {
                let payload = serde_json::to_value(&report).expect("report serializes");
                sink.emit(EventKind::Report, payload.clone());
                AgentTurn::Result { text: summarize_report(&report), payload }
            }
            Err(e) => AgentTurn::answer(format!("The plan was not run: {e}.")),
        }
    }
}

