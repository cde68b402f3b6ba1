//! Shared vocabulary: indicators, slots, plans, chat messages and agent turns.

pub mod canonical;
pub mod signature;

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use canonical::{canonical_value, from_canonical_str, to_canonical_string};
pub use signature::{parse_signature, Cidr, Signature, SignatureError, SignatureType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error("last_reported {last} precedes first_reported {first}")]
    ReportOrder { first: String, last: String },
    #[error("time window starts after it ends")]
    InvertedWindow,
    #[error("slot `{0}` is both set directly and bound to a step output")]
    SlotBoundTwice(SlotName),
    #[error("step {step} references step {target}, which does not precede it")]
    ForwardReference { step: u32, target: u32 },
    #[error("plan step ordinals must run 1..=n, found {found} at position {position}")]
    Ordinals { position: usize, found: u32 },
    #[error("plan step {0} has no intent")]
    MissingIntent(u32),
    #[error("plan is empty")]
    EmptyPlan,
    #[error("invalid step output reference `{0}`")]
    BadReference(String),
    #[error("message content is empty")]
    EmptyMessage,
    #[error("clarification must name at least one missing slot")]
    NoMissingSlots,
    #[error("confirmation is only requested for plans with a block or unblock step")]
    NothingToConfirm,
    #[error("unknown feed source `{0}`")]
    UnknownSource(String),
}

/// The five OSINT feeds the store is fed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceId {
    AbuseUrl,
    AbuseMalware,
    MalwareBazaar,
    AlienvaultOtx,
    Anomali,
}

impl SourceId {
    pub const ALL: [SourceId; 5] = [
        SourceId::AbuseUrl,
        SourceId::AbuseMalware,
        SourceId::MalwareBazaar,
        SourceId::AlienvaultOtx,
        SourceId::Anomali,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceId::AbuseUrl => "abuse-url",
            SourceId::AbuseMalware => "abuse-malware",
            SourceId::MalwareBazaar => "malware-bazaar",
            SourceId::AlienvaultOtx => "alienvault-otx",
            SourceId::Anomali => "anomali",
        }
    }

    /// Environment variable holding this feed's API key.
    pub fn key_env_var(self) -> String {
        format!("SENTINEL_FEED_{}_KEY", self.as_str().to_ascii_uppercase().replace('-', "_"))
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceId {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| DomainError::UnknownSource(s.to_string()))
    }
}

/// One normalized indicator of compromise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IocRecord {
    pub id: String,
    pub signature: Signature,
    pub source: SourceId,
    #[serde(with = "canonical::timestamp")]
    pub first_reported: DateTime<Utc>,
    #[serde(with = "canonical::timestamp")]
    pub last_reported: DateTime<Utc>,
    pub threat_label: String,
    pub ports: Option<Vec<u16>>,
    pub raw: String,
}

impl IocRecord {
    pub fn new(
        source: SourceId,
        signature: Signature,
        first_reported: DateTime<Utc>,
        last_reported: DateTime<Utc>,
        threat_label: impl Into<String>,
        ports: Option<Vec<u16>>,
        raw: impl Into<String>,
    ) -> Result<IocRecord, DomainError> {
        let first_reported = first_reported.trunc_subsecs(0);
        let last_reported = last_reported.trunc_subsecs(0);
        if last_reported < first_reported {
            return Err(DomainError::ReportOrder {
                first: canonical::timestamp::format(&first_reported),
                last: canonical::timestamp::format(&last_reported),
            });
        }
        let ports = ports.map(|mut p| {
            p.sort_unstable();
            p.dedup();
            p
        });
        Ok(IocRecord {
            id: record_id(source, &signature),
            signature,
            source,
            first_reported,
            last_reported,
            threat_label: threat_label.into(),
            ports,
            raw: raw.into(),
        })
    }

    pub fn has_port(&self, port: u16) -> bool {
        self.ports.as_deref().is_some_and(|p| p.contains(&port))
    }

    /// Checks the invariants a deserialized record must satisfy.
    pub fn validate(&self) -> Result<(), DomainError> {
        parse_signature(&self.signature.value, Some(self.signature.kind))?;
        if self.last_reported < self.first_reported {
            return Err(DomainError::ReportOrder {
                first: canonical::timestamp::format(&self.first_reported),
                last: canonical::timestamp::format(&self.last_reported),
            });
        }
        if self.id != record_id(self.source, &self.signature) {
            return Err(DomainError::BadReference(format!("record id {}", self.id)));
        }
        Ok(())
    }
}

/// Lowercase hex SHA-256 of `source|kind|value`.
pub fn record_id(source: SourceId, signature: &Signature) -> String {
    let canonical = format!("{}|{}|{}", source.as_str(), signature.kind.as_str(), signature.value);
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Inclusive time range; either end may be open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    #[serde(with = "canonical::timestamp::option", default)]
    pub from_date: Option<DateTime<Utc>>,
    #[serde(with = "canonical::timestamp::option", default)]
    pub to_date: Option<DateTime<Utc>>,
}

impl TimeWindow {
    pub const UNBOUNDED: TimeWindow = TimeWindow { from_date: None, to_date: None };

    pub fn new(from_date: Option<DateTime<Utc>>, to_date: Option<DateTime<Utc>>) -> Result<TimeWindow, DomainError> {
        let w = TimeWindow { from_date, to_date };
        w.validate()?;
        Ok(w)
    }

    pub fn between(from: DateTime<Utc>, to: DateTime<Utc>) -> Result<TimeWindow, DomainError> {
        TimeWindow::new(Some(from), Some(to))
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        match (self.from_date, self.to_date) {
            (Some(f), Some(t)) if f > t => Err(DomainError::InvertedWindow),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, ts: DateTime<Utc>) -> bool {
        self.from_date.is_none_or(|f| ts >= f) && self.to_date.is_none_or(|t| ts <= t)
    }

    pub fn is_unbounded(&self) -> bool {
        self.from_date.is_none() && self.to_date.is_none()
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = |t: &Option<DateTime<Utc>>| t.as_ref().map(canonical::timestamp::format);
        match (end(&self.from_date), end(&self.to_date)) {
            (None, None) => f.write_str("any time"),
            (Some(a), None) => write!(f, "since {a}"),
            (None, Some(b)) => write!(f, "until {b}"),
            (Some(a), Some(b)) => write!(f, "{a} to {b}"),
        }
    }
}

/// Stage-one label of a user message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneralIntent {
    Irrelevant,
    Cybersecurity,
    Query,
    Action,
}

impl GeneralIntent {
    pub const ALL: [GeneralIntent; 4] = [
        GeneralIntent::Irrelevant,
        GeneralIntent::Cybersecurity,
        GeneralIntent::Query,
        GeneralIntent::Action,
    ];

    pub fn label(self) -> &'static str {
        match self {
            GeneralIntent::Irrelevant => "irrelevant",
            GeneralIntent::Cybersecurity => "cybersecurity",
            GeneralIntent::Query => "query",
            GeneralIntent::Action => "action",
        }
    }
}

/// Slot-level intent of a single plan step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionIntent {
    Status,
    Search,
    Block,
    Unblock,
}

impl ActionIntent {
    pub const ALL: [ActionIntent; 4] = [
        ActionIntent::Status,
        ActionIntent::Search,
        ActionIntent::Block,
        ActionIntent::Unblock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionIntent::Status => "status",
            ActionIntent::Search => "search",
            ActionIntent::Block => "block",
            ActionIntent::Unblock => "unblock",
        }
    }

    pub fn is_destructive(self) -> bool {
        matches!(self, ActionIntent::Block | ActionIntent::Unblock)
    }
}

impl fmt::Display for ActionIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionIntent {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        ActionIntent::ALL
            .into_iter()
            .find(|i| i.as_str() == lower)
            .ok_or_else(|| DomainError::BadReference(s.to_string()))
    }
}

/// Names of the six slots, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotName {
    Intent,
    SignatureType,
    SignatureValue,
    FromDate,
    ToDate,
    Quantity,
}

impl SlotName {
    pub const ALL: [SlotName; 6] = [
        SlotName::Intent,
        SlotName::SignatureType,
        SlotName::SignatureValue,
        SlotName::FromDate,
        SlotName::ToDate,
        SlotName::Quantity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlotName::Intent => "intent",
            SlotName::SignatureType => "signature_type",
            SlotName::SignatureValue => "signature_value",
            SlotName::FromDate => "from_date",
            SlotName::ToDate => "to_date",
            SlotName::Quantity => "quantity",
        }
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotName {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| DomainError::BadReference(s.to_string()))
    }
}

/// Reference to a named output of an earlier plan step, written `$<step>.<output>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepOutputRef {
    pub step_ordinal: u32,
    pub output_name: String,
}

impl StepOutputRef {
    pub fn new(step_ordinal: u32, output_name: impl Into<String>) -> StepOutputRef {
        StepOutputRef { step_ordinal, output_name: output_name.into() }
    }
}

impl fmt::Display for StepOutputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{}", self.step_ordinal, self.output_name)
    }
}

impl FromStr for StepOutputRef {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DomainError::BadReference(s.to_string());
        let body = s.trim().strip_prefix('$').ok_or_else(bad)?;
        let (step, name) = body.split_once('.').ok_or_else(bad)?;
        let step: u32 = step.parse().map_err(|_| bad())?;
        let name_ok = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if step == 0 || !name_ok {
            return Err(bad());
        }
        Ok(StepOutputRef::new(step, name))
    }
}

impl Serialize for StepOutputRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StepOutputRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// The six extracted slots plus bindings to earlier step outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotSet {
    pub intent: Option<ActionIntent>,
    pub signature_type: Option<SignatureType>,
    pub signature_value: Option<String>,
    #[serde(default)]
    pub window: TimeWindow,
    pub quantity: Option<NonZeroU32>,
    #[serde(default)]
    pub bindings: BTreeMap<SlotName, StepOutputRef>,
}

impl SlotSet {
    pub fn with_intent(intent: ActionIntent) -> SlotSet {
        SlotSet { intent: Some(intent), ..SlotSet::default() }
    }

    /// Directly-set slots; a binding does not count.
    pub fn has_direct(&self, slot: SlotName) -> bool {
        match slot {
            SlotName::Intent => self.intent.is_some(),
            SlotName::SignatureType => self.signature_type.is_some(),
            SlotName::SignatureValue => self.signature_value.is_some(),
            SlotName::FromDate => self.window.from_date.is_some(),
            SlotName::ToDate => self.window.to_date.is_some(),
            SlotName::Quantity => self.quantity.is_some(),
        }
    }

    /// Set either directly or through a binding.
    pub fn provides(&self, slot: SlotName) -> bool {
        self.has_direct(slot) || self.bindings.contains_key(&slot)
    }

    pub fn clear(&mut self, slot: SlotName) {
        match slot {
            SlotName::Intent => self.intent = None,
            SlotName::SignatureType => self.signature_type = None,
            SlotName::SignatureValue => self.signature_value = None,
            SlotName::FromDate => self.window.from_date = None,
            SlotName::ToDate => self.window.to_date = None,
            SlotName::Quantity => self.quantity = None,
        }
        self.bindings.remove(&slot);
    }

    /// The signature the direct type/value pair denotes, if both are present.
    pub fn signature(&self) -> Option<Result<Signature, SignatureError>> {
        match (&self.signature_type, &self.signature_value) {
            (Some(kind), Some(value)) => Some(parse_signature(value, Some(*kind))),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.window.validate()?;
        if let Some(found) = self.signature() {
            found?;
        }
        for slot in self.bindings.keys() {
            if self.has_direct(*slot) {
                return Err(DomainError::SlotBoundTwice(*slot));
            }
        }
        Ok(())
    }
}

/// One step of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub ordinal: u32,
    pub description: String,
    pub slots: SlotSet,
    /// Runs the step only when the referenced boolean output of a prior step is true.
    #[serde(default)]
    pub guard: Option<StepOutputRef>,
}

impl PlanStep {
    pub fn intent(&self) -> Option<ActionIntent> {
        self.slots.intent
    }

    pub fn references(&self) -> impl Iterator<Item = &StepOutputRef> {
        self.slots.bindings.values().chain(self.guard.iter())
    }
}

/// Checks ordinal contiguity, intents and backward-only references.
pub fn validate_plan(plan: &[PlanStep]) -> Result<(), DomainError> {
    if plan.is_empty() {
        return Err(DomainError::EmptyPlan);
    }
    for (i, step) in plan.iter().enumerate() {
        let expected = u32::try_from(i + 1).unwrap_or(u32::MAX);
        if step.ordinal != expected {
            return Err(DomainError::Ordinals { position: i, found: step.ordinal });
        }
        if step.slots.intent.is_none() {
            return Err(DomainError::MissingIntent(step.ordinal));
        }
        step.slots.validate()?;
        for r in step.references() {
            if r.step_ordinal >= step.ordinal {
                return Err(DomainError::ForwardReference { step: step.ordinal, target: r.step_ordinal });
            }
        }
    }
    Ok(())
}

pub fn plan_is_destructive(plan: &[PlanStep]) -> bool {
    plan.iter().any(|s| s.intent().is_some_and(ActionIntent::is_destructive))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    System,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(with = "canonical::timestamp")]
    pub timestamp: DateTime<Utc>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>, timestamp: DateTime<Utc>) -> Result<ChatMessage, DomainError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(DomainError::EmptyMessage);
        }
        Ok(ChatMessage { role, content, timestamp: timestamp.trunc_subsecs(0) })
    }
}

/// What the agent says back for one user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentTurn {
    Answer {
        text: String,
        /// Set when the turn failed transiently and can be resent unchanged.
        #[serde(default)]
        retryable: bool,
    },
    Clarification {
        text: String,
        missing: Vec<SlotName>,
    },
    ConfirmationRequest {
        summary: String,
        plan: Vec<PlanStep>,
    },
    Result {
        text: String,
        payload: serde_json::Value,
    },
}

impl AgentTurn {
    pub fn answer(text: impl Into<String>) -> AgentTurn {
        AgentTurn::Answer { text: text.into(), retryable: false }
    }

    pub fn clarification(text: impl Into<String>, missing: Vec<SlotName>) -> Result<AgentTurn, DomainError> {
        if missing.is_empty() {
            return Err(DomainError::NoMissingSlots);
        }
        Ok(AgentTurn::Clarification { text: text.into(), missing })
    }

    pub fn confirmation(summary: impl Into<String>, plan: Vec<PlanStep>) -> Result<AgentTurn, DomainError> {
        if !plan_is_destructive(&plan) {
            return Err(DomainError::NothingToConfirm);
        }
        Ok(AgentTurn::ConfirmationRequest { summary: summary.into(), plan })
    }

    /// Text shown to the operator.
    pub fn text(&self) -> &str {
        match self {
            AgentTurn::Answer { text, .. } | AgentTurn::Clarification { text, .. } | AgentTurn::Result { text, .. } => text,
            AgentTurn::ConfirmationRequest { summary, .. } => summary,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AgentTurn::Answer { .. } => "answer",
            AgentTurn::Clarification { .. } => "clarification",
            AgentTurn::ConfirmationRequest { .. } => "confirmation_request",
            AgentTurn::Result { .. } => "result",
        }
    }
}
