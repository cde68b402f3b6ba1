//! Reading planner and extractor completions.

use std::num::NonZeroU32;

use serde_json::Value;
use thiserror::Error;

use crate::domain::canonical::timestamp;
use crate::domain::{parse_signature, ActionIntent, PlanStep, SignatureType, SlotName, SlotSet, StepOutputRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object in completion")]
    NoJson,
    #[error("invalid JSON: {0}")]
    BadJson(String),
    #[error("{0}")]
    Shape(String),
}

/// The JSON document in a completion: the last ```json fence if there is
/// one, otherwise the outermost `{...}` or `[...]` span.
pub fn json_payload(completion: &str) -> Result<Value, ParseError> {
    let mut candidate: Option<&str> = None;
    let mut rest = completion;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(close) = after.find("```") else { break };
        let block = &after[..close];
        let block = block.strip_prefix("json").or_else(|| block.strip_prefix("JSON")).unwrap_or(block);
        candidate = Some(block);
        rest = &after[close + 3..];
    }
    let text = match candidate {
        Some(c) => c.trim(),
        None => {
            let start = completion.find(['{', '[']).ok_or(ParseError::NoJson)?;
            let end = completion.rfind(['}', ']']).ok_or(ParseError::NoJson)?;
            if end < start {
                return Err(ParseError::NoJson);
            }
            &completion[start..=end]
        }
    };
    serde_json::from_str(text).map_err(|e| ParseError::BadJson(e.to_string()))
}

fn text_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("null"))
}

/// Steps as planned: intent, description and optional guard. Slots other
/// than the intent are filled later by extraction.
pub fn parse_plan(completion: &str) -> Result<Vec<PlanStep>, ParseError> {
    let v = json_payload(completion)?;
    let steps = match &v {
        Value::Array(a) => a,
        Value::Object(o) => o.get("steps").and_then(Value::as_array).ok_or_else(|| ParseError::Shape("missing `steps`".into()))?,
        _ => return Err(ParseError::Shape("expected an object or array".into())),
    };
    if steps.is_empty() {
        return Err(ParseError::Shape("plan has no steps".into()));
    }
    let mut out = Vec::with_capacity(steps.len());
    for (i, s) in steps.iter().enumerate() {
        let ordinal = u32::try_from(i + 1).map_err(|_| ParseError::Shape("too many steps".into()))?;
        if let Some(n) = s.get("step").and_then(Value::as_u64) {
            if n != u64::from(ordinal) {
                return Err(ParseError::Shape(format!("step {n} at position {ordinal}")));
            }
        }
        let intent: ActionIntent = text_field(s, "intent")
            .ok_or_else(|| ParseError::Shape(format!("step {ordinal} has no intent")))?
            .parse()
            .map_err(|_| ParseError::Shape(format!("step {ordinal} has an unknown intent")))?;
        let description = text_field(s, "description")
            .ok_or_else(|| ParseError::Shape(format!("step {ordinal} has no description")))?
            .to_string();
        let guard = match text_field(s, "when") {
            Some(w) => Some(w.parse::<StepOutputRef>().map_err(|e| ParseError::Shape(e.to_string()))?),
            None => None,
        };
        out.push(PlanStep { ordinal, description, slots: SlotSet::with_intent(intent), guard });
    }
    Ok(out)
}

/// One extractor sample. An unparseable indicator is dropped rather than
/// guessed at, so the missing-slot check asks for it.
pub fn parse_slots(completion: &str) -> Result<SlotSet, ParseError> {
    let v = json_payload(completion)?;
    if !v.is_object() {
        return Err(ParseError::Shape("expected an object".into()));
    }
    let mut slots = SlotSet::default();
    if let Some(i) = text_field(&v, "intent") {
        slots.intent = Some(i.parse().map_err(|_| ParseError::Shape(format!("unknown intent `{i}`")))?);
    }
    if let Some(t) = text_field(&v, "signature_type") {
        slots.signature_type = Some(t.parse::<SignatureType>().map_err(|_| ParseError::Shape(format!("unknown signature type `{t}`")))?);
    }
    let raw_value = match v.get("signature_value") {
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => text_field(&v, "signature_value").map(str::to_string),
    };
    if let Some(raw) = raw_value {
        if raw.starts_with('$') {
            let r: StepOutputRef = raw.parse().map_err(|_| ParseError::Shape(format!("bad reference `{raw}`")))?;
            slots.bindings.insert(SlotName::SignatureValue, r);
        } else if let Ok(sig) = parse_signature(&raw, slots.signature_type) {
            slots.signature_type = Some(sig.kind);
            slots.signature_value = Some(sig.value);
        }
    }
    for (key, slot) in [("from_date", SlotName::FromDate), ("to_date", SlotName::ToDate)] {
        if let Some(raw) = text_field(&v, key) {
            let t = timestamp::parse_lenient(raw).ok_or_else(|| ParseError::Shape(format!("bad {slot} `{raw}`")))?;
            match slot {
                SlotName::FromDate => slots.window.from_date = Some(t),
                _ => slots.window.to_date = Some(t),
            }
        }
    }
    if let (Some(a), Some(b)) = (slots.window.from_date, slots.window.to_date) {
        if a > b {
            return Err(ParseError::Shape("from_date after to_date".into()));
        }
    }
    slots.quantity = match v.get("quantity") {
        Some(Value::Number(n)) => n.as_u64().and_then(|q| u32::try_from(q).ok()).and_then(NonZeroU32::new),
        Some(Value::String(s)) => s.trim().parse().ok(),
        _ => None,
    };
    Ok(slots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_inside_fence_after_reasoning() {
        let c = "First find the IPs, then block them.\n```json\n{\"steps\":[{\"step\":1,\"intent\":\"search\",\"description\":\"Find IPs reported today\"},{\"step\":2,\"intent\":\"block\",\"description\":\"Block $1.list_ip\"}]}\n```";
        let plan = parse_plan(c).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[1].intent(), Some(ActionIntent::Block));
        let guarded = r#"{"steps":[{"intent":"status","description":"check"},{"intent":"block","description":"b","when":"$1.found"}]}"#;
        assert_eq!(parse_plan(guarded).unwrap()[1].guard, Some(StepOutputRef::new(1, "found")));
    }

    #[test]
    fn malformed_plans() {
        assert_eq!(parse_plan("no idea"), Err(ParseError::NoJson));
        assert!(parse_plan(r#"{"steps":[]}"#).is_err());
        assert!(parse_plan(r#"{"steps":[{"intent":"explode","description":"x"}]}"#).is_err());
        assert!(parse_plan(r#"{"steps":[{"step":2,"intent":"block","description":"x"}]}"#).is_err());
        assert!(parse_plan(r#"{"steps":[{"intent":"block","description":"x","when":"found"}]}"#).is_err());
    }

    #[test]
    fn slot_sample_fields() {
        let s = parse_slots(r#"{"intent":"status","signature_type":"URL","signature_value":"John.Doe.com","from_date":null,"to_date":"","quantity":null}"#).unwrap();
        assert_eq!(s.signature_type, Some(SignatureType::Url));
        assert_eq!(s.signature_value.as_deref(), Some("http://john.doe.com"));
        assert!(s.window.is_unbounded());
        let s = parse_slots(r#"{"intent":"block","signature_type":"ip","signature_value":"$1.list_ip"}"#).unwrap();
        assert_eq!(s.bindings[&SlotName::SignatureValue], StepOutputRef::new(1, "list_ip"));
        let s = parse_slots(r#"{"signature_type":"port","signature_value":23,"quantity":"10"}"#).unwrap();
        assert_eq!(s.signature_value.as_deref(), Some("23"));
        assert_eq!(s.quantity, NonZeroU32::new(10));
        let s = parse_slots(r#"{"signature_type":"ip","signature_value":"999.1.1.1"}"#).unwrap();
        assert_eq!((s.signature_type, s.signature_value), (Some(SignatureType::Ip), None));
        assert!(parse_slots(r#"{"from_date":"2023-01-02","to_date":"2023-01-01"}"#).is_err());
    }
}
