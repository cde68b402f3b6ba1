//! Turns confirmed plans into store queries and SIEM commands.

mod cdb;
mod siem;
mod summary;
mod wazuh;

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dialogue::missing_slots;
use crate::domain::{
    parse_signature, validate_plan, ActionIntent, IocRecord, PlanStep, Signature, SignatureType, SlotName, SlotSet, StepOutputRef,
};
use crate::events::{EventKind, EventSink};
use crate::store::{IocStore, StoreFilter, StoreStats};

pub use cdb::{check_key, parse_cdb, render_cdb, CdbError};
pub use siem::{AgentScope, Fault, MockSiem, SiemCommand, SiemConnector, SiemError};
pub use summary::{summarize_query, summarize_report};
pub use wazuh::{WazuhConfig, WazuhConnector, PASSWORD_ENV as WAZUH_PASSWORD_ENV};

/// Output names a step can publish.
pub const STEP_OUTPUTS: [&str; 4] = ["list_ip", "found", "count", "records"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("step is missing {0:?}")]
    IncompleteSlots(Vec<SlotName>),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid signature: {0}")]
    BadSignature(String),
    #[error("binding {0} resolved to nothing")]
    EmptyBinding(StepOutputRef),
    #[error("binding {0} cannot be resolved")]
    Unresolvable(StepOutputRef),
}

/// How blocks are written to the SIEM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionSettings {
    pub list_name: String,
    pub cdb_value: String,
    pub scope: AgentScope,
}

impl Default for ActionSettings {
    fn default() -> Self {
        ActionSettings { list_name: "sentinel-blacklist".into(), cdb_value: "sentinel".into(), scope: AgentScope::All }
    }
}

/// Store filter for a Status or Search step.
pub fn compile_query(slots: &SlotSet) -> Result<StoreFilter, ExecError> {
    let missing = missing_slots(slots);
    if !missing.is_empty() {
        return Err(ExecError::IncompleteSlots(missing));
    }
    let signature = match slots.signature() {
        Some(s) => Some(s.map_err(|e| ExecError::BadSignature(e.to_string()))?),
        None => None,
    };
    Ok(StoreFilter {
        index_type: slots.signature_type,
        signature,
        window: slots.window,
        sources: None,
        limit: slots.quantity.and_then(|q| NonZeroUsize::new(q.get() as usize)),
    })
}

/// Named outputs of a finished query step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutputs {
    pub list_ip: Vec<String>,
    pub found: bool,
    pub count: usize,
    pub records: Vec<IocRecord>,
}

/// Concrete targets of an action step: the direct signature, or the
/// elements of a bound list, deduplicated in first-seen order.
pub fn action_targets(step: &PlanStep, outputs: &BTreeMap<u32, StepOutputs>) -> Result<Vec<Signature>, ExecError> {
    let slots = &step.slots;
    let mut targets: Vec<Signature> = match slots.bindings.get(&SlotName::SignatureValue) {
        Some(r) => {
            let out = outputs.get(&r.step_ordinal).ok_or_else(|| ExecError::Unresolvable(r.clone()))?;
            match r.output_name.as_str() {
                "list_ip" => out
                    .list_ip
                    .iter()
                    .map(|ip| parse_signature(ip, Some(SignatureType::Ip)).map_err(|e| ExecError::BadSignature(e.to_string())))
                    .collect::<Result<_, _>>()?,
                "records" => out.records.iter().map(|r| r.signature.clone()).collect(),
                _ => return Err(ExecError::Unresolvable(r.clone())),
            }
        }
        None => match slots.signature() {
            Some(s) => vec![s.map_err(|e| ExecError::BadSignature(e.to_string()))?],
            None => return Err(ExecError::IncompleteSlots(missing_slots(slots))),
        },
    };
    let mut seen = BTreeSet::new();
    targets.retain(|s| seen.insert((s.kind, s.value.clone())));
    if targets.is_empty() {
        if let Some(r) = slots.bindings.get(&SlotName::SignatureValue) {
            return Err(ExecError::EmptyBinding(r.clone()));
        }
    }
    Ok(targets)
}

/// SIEM commands for a Block or Unblock step.
///
/// IPs and subnets get a CDB entry plus an active response; other kinds
/// only a CDB entry. Unblock emits the inverse commands.
pub fn compile_action(step: &PlanStep, outputs: &BTreeMap<u32, StepOutputs>, settings: &ActionSettings) -> Result<Vec<SiemCommand>, ExecError> {
    let intent = step.intent().ok_or_else(|| ExecError::IncompleteSlots(vec![SlotName::Intent]))?;
    if !intent.is_destructive() {
        return Err(ExecError::InvalidPlan(format!("step {} is not an action", step.ordinal)));
    }
    let mut out = Vec::new();
    for sig in action_targets(step, outputs)? {
        check_key(&sig.value).map_err(|e| ExecError::BadSignature(e.to_string()))?;
        let network = matches!(sig.kind, SignatureType::Ip | SignatureType::Subnet);
        let list = settings.list_name.clone();
        let scope = settings.scope.clone();
        if intent == ActionIntent::Block {
            out.push(SiemCommand::CdbAdd { list, key: sig.value.clone(), value: settings.cdb_value.clone() });
            if network {
                out.push(SiemCommand::ActiveResponseBlock { target: sig.value, scope });
            }
        } else {
            out.push(SiemCommand::CdbRemove { list, key: sig.value.clone() });
            if network {
                out.push(SiemCommand::ActiveResponseUnblock { target: sig.value, scope });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("guard {0} refers to a step that did not complete")]
pub struct GuardUnresolvable(pub StepOutputRef);

/// True iff the referenced step finished and its output is truthy
/// (`found`, or a nonzero `count`).
pub fn evaluate_guard(guard: &StepOutputRef, outputs: &BTreeMap<u32, StepOutputs>) -> Result<bool, GuardUnresolvable> {
    let out = outputs.get(&guard.step_ordinal).ok_or_else(|| GuardUnresolvable(guard.clone()))?;
    match guard.output_name.as_str() {
        "found" => Ok(out.found),
        "count" => Ok(out.count > 0),
        _ => Err(GuardUnresolvable(guard.clone())),
    }
}

/// Structural checks beyond [`validate_plan`]: every reference names an
/// output the referenced step kind actually publishes.
pub fn check_plan(plan: &[PlanStep]) -> Result<(), ExecError> {
    validate_plan(plan).map_err(|e| ExecError::InvalidPlan(e.to_string()))?;
    for step in plan {
        for (slot, r) in &step.slots.bindings {
            if *slot != SlotName::SignatureValue || !matches!(r.output_name.as_str(), "list_ip" | "records") {
                return Err(ExecError::InvalidPlan(format!("step {} binds {slot} to {r}", step.ordinal)));
            }
            if r.output_name == "list_ip" && step.slots.signature_type.is_some_and(|k| k != SignatureType::Ip) {
                return Err(ExecError::InvalidPlan(format!("step {} binds IP addresses to a non-IP slot", step.ordinal)));
            }
        }
        for r in step.references() {
            if !STEP_OUTPUTS.contains(&r.output_name.as_str()) {
                return Err(ExecError::InvalidPlan(format!("unknown output {r}")));
            }
            let target = &plan[(r.step_ordinal - 1) as usize];
            let ok = match target.intent() {
                Some(ActionIntent::Status) => true,
                Some(ActionIntent::Search) => r.output_name != "found",
                _ => false,
            };
            if !ok {
                return Err(ExecError::InvalidPlan(format!("step {} has no output {}", r.step_ordinal, r.output_name)));
            }
        }
        // CDB keys cannot hold `:`, so URLs and IPv6 addresses cannot be listed
        if step.intent().is_some_and(ActionIntent::is_destructive) {
            if let Some(value) = &step.slots.signature_value {
                check_key(value).map_err(|_| ExecError::InvalidPlan(format!("{value} cannot be written to a CDB list")))?;
            }
        }
        if let Some(g) = &step.guard {
            if !matches!(g.output_name.as_str(), "found" | "count") {
                return Err(ExecError::InvalidPlan(format!("guard {g} is not a boolean output")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
    pub count: usize,
    /// Records included below; fewer than `count` when truncated.
    #[serde(default)]
    pub shown: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list_ip: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<IocRecord>,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StoreStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<SiemCommand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum SkipReason {
    GuardFalse { guard: StepOutputRef },
    GuardUnresolvable { guard: StepOutputRef },
    EmptyBinding { binding: StepOutputRef },
    PriorFailure { step: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum FailReason {
    SiemUnavailable { detail: String },
    SiemRejected { detail: String },
    InvalidStep { detail: String },
    StoreFailure { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { payload: StepPayload },
    Skipped { reason: SkipReason },
    Failed { reason: FailReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub ordinal: u32,
    pub kind: ActionIntent,
    pub description: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub steps: Vec<StepReport>,
    pub commands_issued: Vec<SiemCommand>,
    pub command_count: usize,
    pub duration_ms: u64,
}

pub struct Executor {
    pub store: Arc<IocStore>,
    pub siem: Arc<dyn SiemConnector>,
    pub settings: ActionSettings,
}

impl Executor {
    pub fn new(store: Arc<IocStore>, siem: Arc<dyn SiemConnector>, settings: ActionSettings) -> Executor {
        Executor { store, siem, settings }
    }

    fn run_query(&self, step: &PlanStep) -> Result<(StepPayload, StepOutputs), FailReason> {
        let invalid = |e: ExecError| FailReason::InvalidStep { detail: e.to_string() };
        let store_err = |e: crate::store::StoreError| FailReason::StoreFailure { detail: e.to_string() };
        let filter = compile_query(&step.slots).map_err(invalid)?;
        let ips = |records: &[IocRecord]| -> Vec<String> {
            let mut seen = BTreeSet::new();
            records
                .iter()
                .filter(|r| r.signature.kind == SignatureType::Ip)
                .filter(|r| seen.insert(r.signature.value.clone()))
                .map(|r| r.signature.value.clone())
                .collect()
        };
        if step.intent() == Some(ActionIntent::Status) {
            let sig = filter.signature.as_ref().ok_or_else(|| invalid(ExecError::IncompleteSlots(vec![SlotName::SignatureValue])))?;
            let verdict = self.store.lookup_status(sig);
            let outputs = StepOutputs {
                list_ip: ips(&verdict.records),
                found: verdict.found,
                count: verdict.records.len(),
                records: verdict.records.clone(),
            };
            let payload = StepPayload {
                filter: Some(filter.describe()),
                found: Some(verdict.found),
                count: outputs.count,
                shown: outputs.count,
                list_ip: outputs.list_ip.clone(),
                records: verdict.records,
                ..StepPayload::default()
            };
            return Ok((payload, outputs));
        }
        let result = self.store.query(&filter).map_err(store_err)?;
        // without an explicit quantity, bindings see every match, not just the displayed page
        let list_ip = if filter.limit.is_none() && result.truncated {
            ips(&self.store.query(&StoreFilter { limit: NonZeroUsize::new(result.total_matched), ..filter.clone() }).map_err(store_err)?.records)
        } else {
            ips(&result.records)
        };
        let stats = match filter.signature {
            None => Some(self.store.stats(&filter.window).map_err(store_err)?),
            Some(_) => None,
        };
        let outputs = StepOutputs { list_ip: list_ip.clone(), found: result.total_matched > 0, count: result.total_matched, records: result.records.clone() };
        let payload = StepPayload {
            filter: Some(filter.describe()),
            found: None,
            count: result.total_matched,
            shown: result.records.len(),
            list_ip,
            records: result.records,
            truncated: result.truncated,
            stats,
            commands: Vec::new(),
        };
        Ok((payload, outputs))
    }

    /// Runs a confirmed plan. Steps run in order; after a failure the rest are skipped.
    pub async fn execute(&self, plan: &[PlanStep], sink: &dyn EventSink) -> Result<ExecutionReport, ExecError> {
        check_plan(plan)?;
        let started = Instant::now();
        let mut outputs: BTreeMap<u32, StepOutputs> = BTreeMap::new();
        let mut steps = Vec::with_capacity(plan.len());
        let mut issued = Vec::new();
        let mut failed_at: Option<u32> = None;
        for step in plan {
            let kind = step.intent().expect("checked by check_plan");
            let outcome = self.run_step(step, kind, &mut outputs, &mut issued, failed_at, sink).await;
            if matches!(outcome, Outcome::Failed { .. }) && failed_at.is_none() {
                failed_at = Some(step.ordinal);
            }
            steps.push(StepReport { ordinal: step.ordinal, kind, description: step.description.clone(), outcome });
        }
        Ok(ExecutionReport {
            steps,
            command_count: issued.len(),
            commands_issued: issued,
            duration_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
        })
    }

    async fn run_step(
        &self,
        step: &PlanStep,
        kind: ActionIntent,
        outputs: &mut BTreeMap<u32, StepOutputs>,
        issued: &mut Vec<SiemCommand>,
        failed_at: Option<u32>,
        sink: &dyn EventSink,
    ) -> Outcome {
        if let Some(g) = &step.guard {
            match evaluate_guard(g, outputs) {
                Err(_) => return Outcome::Skipped { reason: SkipReason::GuardUnresolvable { guard: g.clone() } },
                Ok(false) => return Outcome::Skipped { reason: SkipReason::GuardFalse { guard: g.clone() } },
                Ok(true) => {}
            }
        }
        if let Some(step) = failed_at {
            return Outcome::Skipped { reason: SkipReason::PriorFailure { step } };
        }
        if !kind.is_destructive() {
            return match self.run_query(step) {
                Ok((payload, out)) => {
                    outputs.insert(step.ordinal, out);
                    Outcome::Ok { payload }
                }
                Err(reason) => Outcome::Failed { reason },
            };
        }
        let commands = match compile_action(step, outputs, &self.settings) {
            Ok(c) => c,
            Err(ExecError::EmptyBinding(binding)) => return Outcome::Skipped { reason: SkipReason::EmptyBinding { binding } },
            Err(ExecError::Unresolvable(r)) => return Outcome::Skipped { reason: SkipReason::GuardUnresolvable { guard: r } },
            Err(e) => return Outcome::Failed { reason: FailReason::InvalidStep { detail: e.to_string() } },
        };
        for c in &commands {
            sink.emit(EventKind::Command, json!({"step": step.ordinal, "command": c}));
        }
        match self.siem.apply(&commands).await {
            Ok(()) => {
                issued.extend(commands.iter().cloned());
                let targets = commands.iter().filter(|c| matches!(c, SiemCommand::CdbAdd { .. } | SiemCommand::CdbRemove { .. })).count();
                Outcome::Ok { payload: StepPayload { count: targets, commands, ..StepPayload::default() } }
            }
            Err(SiemError::Unavailable(detail)) => Outcome::Failed { reason: FailReason::SiemUnavailable { detail } },
            Err(e) => Outcome::Failed { reason: FailReason::SiemRejected { detail: e.to_string() } },
        }
    }
}
