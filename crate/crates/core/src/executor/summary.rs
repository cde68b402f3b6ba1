//! Operator-facing text. Every number printed here is copied from the payload.

use std::fmt::Write;

use crate::domain::canonical::timestamp;

use super::{ExecutionReport, FailReason, Outcome, SiemCommand, SkipReason, StepPayload};

const TOP_ENTRIES: usize = 5;

/// Text for one query step's payload.
pub fn summarize_query(payload: &StepPayload) -> String {
    let filter = payload.filter.as_deref().unwrap_or("the query");
    let mut out = String::new();
    match payload.found {
        Some(true) => {
            let _ = write!(out, "{filter}: present in the threat feeds ({} records).", payload.count);
        }
        Some(false) => {
            let _ = write!(out, "{filter}: not present in the threat feeds ({} records).", payload.count);
        }
        None => {
            let _ = write!(out, "{} indicators match {filter}.", payload.count);
            if payload.truncated {
                let _ = write!(out, " Results truncated: showing {} of {}.", payload.shown, payload.count);
            }
        }
    }
    if let Some(stats) = &payload.stats {
        let parts: Vec<String> = stats.counts_by_kind.iter().map(|(k, n)| format!("{k} {n}")).collect();
        if !parts.is_empty() {
            let _ = write!(out, "\nBy type: {}.", parts.join(", "));
        }
        let parts: Vec<String> = stats.counts_by_source.iter().map(|(s, n)| format!("{s} {n}")).collect();
        if !parts.is_empty() {
            let _ = write!(out, "\nBy source: {}.", parts.join(", "));
        }
    }
    for r in payload.records.iter().take(TOP_ENTRIES) {
        let _ = write!(
            out,
            "\n- {} {} ({}, {}, last reported {})",
            r.signature.kind,
            r.signature.value,
            r.source,
            r.threat_label,
            timestamp::format(&r.last_reported)
        );
    }
    out
}

fn describe_command(c: &SiemCommand) -> String {
    match c {
        SiemCommand::CdbAdd { list, key, .. } => format!("added {key} to list {list}"),
        SiemCommand::CdbRemove { list, key } => format!("removed {key} from list {list}"),
        SiemCommand::ActiveResponseBlock { target, .. } => format!("blocked {target} on agents"),
        SiemCommand::ActiveResponseUnblock { target, .. } => format!("unblocked {target} on agents"),
    }
}

/// Text for a whole execution report.
pub fn summarize_report(report: &ExecutionReport) -> String {
    let mut out = String::new();
    for step in &report.steps {
        let _ = writeln!(out, "Step {} ({}): {}", step.ordinal, step.kind, step.description);
        match &step.outcome {
            Outcome::Ok { payload } if !step.kind.is_destructive() => {
                for line in summarize_query(payload).lines() {
                    let _ = writeln!(out, "  {line}");
                }
            }
            Outcome::Ok { payload } => {
                for c in &payload.commands {
                    let _ = writeln!(out, "  {}", describe_command(c));
                }
            }
            Outcome::Skipped { reason } => {
                let why = match reason {
                    SkipReason::GuardFalse { guard } => format!("condition {guard} was false"),
                    SkipReason::GuardUnresolvable { guard } => format!("{guard} could not be evaluated"),
                    SkipReason::EmptyBinding { binding } => format!("{binding} matched nothing"),
                    SkipReason::PriorFailure { step } => format!("step {step} failed"),
                };
                let _ = writeln!(out, "  skipped: {why}");
            }
            Outcome::Failed { reason } => {
                let why = match reason {
                    FailReason::SiemUnavailable { detail } => format!("SIEM unavailable ({detail})"),
                    FailReason::SiemRejected { detail } => format!("SIEM rejected the commands ({detail})"),
                    FailReason::InvalidStep { detail } => format!("invalid step ({detail})"),
                    FailReason::StoreFailure { detail } => format!("store error ({detail})"),
                };
                let _ = writeln!(out, "  failed: {why}");
            }
        }
    }
    let _ = write!(out, "{} SIEM commands issued.", report.command_count);
    out
}
