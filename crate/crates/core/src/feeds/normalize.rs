use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::canonical::timestamp;
use crate::domain::signature::url_port;
use crate::domain::{canonical_value, parse_signature, IocRecord, SignatureType};

use super::{FeedError, FeedMapping, FeedSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail")]
pub enum RejectReason {
    UnparseableSignature(String),
    MissingField(String),
    UnsupportedType(String),
    BadTimestamp(String),
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UnparseableSignature(_) => "UnparseableSignature",
            RejectReason::MissingField(_) => "MissingField",
            RejectReason::UnsupportedType(_) => "UnsupportedType",
            RejectReason::BadTimestamp(_) => "BadTimestamp",
        }
    }
}

/// An entry that could not become a record, kept in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub entry: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Normalized {
    pub records: Vec<IocRecord>,
    pub rejects: Vec<Reject>,
}

impl Normalized {
    pub fn fetched(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

/// An entry together with its enclosing objects, innermost last.
pub(crate) struct Entry<'a> {
    pub value: &'a Value,
    pub parents: Vec<&'a Value>,
}

impl<'a> Entry<'a> {
    fn field(&self, spec: &str) -> Option<&'a Value> {
        let mut target = self.value;
        let mut rest = spec;
        let mut depth = 0;
        while let Some(r) = rest.strip_prefix("../") {
            depth += 1;
            rest = r;
        }
        if depth > 0 {
            target = *self.parents.iter().rev().nth(depth - 1)?;
        }
        match target.get(rest)? {
            Value::Null => None,
            Value::String(s) if s.trim().is_empty() => None,
            v => Some(v),
        }
    }

    fn first_text(&self, specs: &[String]) -> Option<String> {
        specs.iter().find_map(|s| self.field(s)).and_then(scalar_text)
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Walks `path` from the payload root, flattening arrays on the way.
pub(crate) fn collect_entries<'a>(root: &'a Value, path: &[String]) -> Result<Vec<Entry<'a>>, String> {
    let mut level: Vec<Entry<'a>> = vec![Entry { value: root, parents: Vec::new() }];
    for key in path {
        let mut next = Vec::new();
        for e in level {
            let obj = e.value.as_object().ok_or_else(|| format!("expected an object around `{key}`"))?;
            let mut parents = e.parents.clone();
            parents.push(e.value);
            match obj.get(key) {
                None | Some(Value::Null) => {}
                Some(Value::Array(items)) => {
                    next.extend(items.iter().map(|v| Entry { value: v, parents: parents.clone() }));
                }
                Some(other @ Value::Object(_)) => next.push(Entry { value: other, parents }),
                Some(_) => return Err(format!("`{key}` is neither an array nor an object")),
            }
        }
        level = next;
    }
    Ok(level)
}

/// Turns a raw payload into records and per-entry rejects.
pub fn normalize(source: &FeedSource, payload: &str) -> Result<Normalized, FeedError> {
    let malformed = |reason: String| FeedError::MalformedPayload { feed: source.id, reason };
    let root: Value = serde_json::from_str(payload).map_err(|e| malformed(e.to_string()))?;
    let entries = collect_entries(&root, &source.mapping.entries).map_err(malformed)?;
    let mut out = Normalized::default();
    for entry in entries {
        match normalize_entry(source, &source.mapping, &entry) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejects.push(Reject { entry: canonical_value(entry.value), reason }),
        }
    }
    Ok(out)
}

fn normalize_entry(source: &FeedSource, m: &FeedMapping, entry: &Entry<'_>) -> Result<IocRecord, RejectReason> {
    if !entry.value.is_object() {
        return Err(RejectReason::MissingField("entry is not an object".into()));
    }
    let indicator = entry
        .first_text(&m.indicator)
        .ok_or_else(|| RejectReason::MissingField(m.indicator.join("|")))?;
    let kind = match (m.kind, &m.kind_field) {
        (Some(k), _) => k,
        (None, Some(field)) => {
            let label = entry
                .field(field)
                .and_then(scalar_text)
                .ok_or_else(|| RejectReason::MissingField(field.clone()))?;
            *m.kind_map.get(&label).ok_or(RejectReason::UnsupportedType(label))?
        }
        (None, None) => return Err(RejectReason::UnsupportedType("unmapped".into())),
    };
    let signature = parse_signature(&indicator, Some(kind)).map_err(|e| RejectReason::UnparseableSignature(e.to_string()))?;

    let first_raw = entry
        .first_text(&m.first_seen)
        .ok_or_else(|| RejectReason::MissingField(m.first_seen.join("|")))?;
    let first = timestamp::parse_lenient(&first_raw).ok_or(RejectReason::BadTimestamp(first_raw))?;
    let last = match entry.first_text(&m.last_seen) {
        Some(raw) => timestamp::parse_lenient(&raw).ok_or(RejectReason::BadTimestamp(raw))?,
        None => first,
    };
    let (first, last) = (first.min(last), first.max(last));

    let mut ports: Vec<u16> = Vec::new();
    if let Some(field) = &m.ports_field {
        match entry.field(field) {
            Some(Value::Array(items)) => ports.extend(items.iter().filter_map(port_of)),
            Some(v) => ports.extend(port_of(v)),
            None => {}
        }
    }
    if m.port_from_url && signature.kind == SignatureType::Url {
        ports.extend(url_port(&signature.value));
    }
    let ports = (!ports.is_empty()).then_some(ports);
    let threat = entry.first_text(&m.threat).unwrap_or_default();
    IocRecord::new(source.id, signature, first, last, threat, ports, canonical_value(entry.value))
        .map_err(|e| RejectReason::BadTimestamp(e.to_string()))
}

fn port_of(v: &Value) -> Option<u16> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|p| u16::try_from(p).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SourceId;
    use crate::feeds::FeedCatalog;

    fn source(id: SourceId) -> FeedSource {
        FeedCatalog::default().get(id).clone()
    }

    #[test]
    fn urlhaus_entry_maps_to_url_record() {
        let payload = r#"{"query_status":"ok","urls":[{"id":"1","url":"http://103.12.8.1:9000/Mozi.m","url_status":"online",
            "date_added":"2023-01-01 10:00:00 UTC","threat":"malware_download","tags":["Mozi"],"reporter":"r"}]}"#;
        let n = normalize(&source(SourceId::AbuseUrl), payload).unwrap();
        assert!(n.rejects.is_empty());
        let r = &n.records[0];
        assert_eq!(r.signature.kind, SignatureType::Url);
        assert_eq!(r.signature.value, "http://103.12.8.1:9000/Mozi.m");
        assert_eq!(r.source, SourceId::AbuseUrl);
        assert_eq!(r.threat_label, "malware_download");
        assert_eq!(r.ports, Some(vec![9000]));
        assert_eq!(r.first_reported, r.last_reported);
        assert!(r.raw.contains("\"reporter\":\"r\""));
    }

    #[test]
    fn empty_and_missing_entry_lists() {
        let s = source(SourceId::AbuseUrl);
        assert_eq!(normalize(&s, r#"{"query_status":"ok","urls":[]}"#).unwrap(), Normalized::default());
        assert_eq!(normalize(&s, r#"{"query_status":"no_results"}"#).unwrap(), Normalized::default());
        assert!(matches!(normalize(&s, "not json"), Err(FeedError::MalformedPayload { .. })));
        assert!(matches!(normalize(&s, r#"{"urls":5}"#), Err(FeedError::MalformedPayload { .. })));
    }

    #[test]
    fn invalid_ip_is_rejected() {
        let payload = r#"{"objects":[{"value":"999.1.1.1","type":"ip","created_ts":"2023-01-01T10:00:00.000Z"}]}"#;
        let n = normalize(&source(SourceId::Anomali), payload).unwrap();
        assert!(n.records.is_empty());
        assert_eq!(n.rejects.len(), 1);
        assert_eq!(n.rejects[0].reason.code(), "UnparseableSignature");
    }

    #[test]
    fn otx_nested_indicators_read_parent_fields() {
        let payload = r#"{"results":[{"name":"Pulse A","created":"2023-01-01T00:00:00.000000","modified":"2023-01-01T05:00:00.000000",
            "indicators":[{"indicator":"54.12.0.0/16","type":"CIDR","created":"2023-01-01T01:00:00"},
                          {"indicator":"x.y","type":"Mutex","created":"2023-01-01T01:00:00"}]}]}"#;
        let n = normalize(&source(SourceId::AlienvaultOtx), payload).unwrap();
        assert_eq!(n.records.len(), 1);
        assert_eq!(n.records[0].threat_label, "Pulse A");
        assert_eq!(n.records[0].signature.kind, SignatureType::Subnet);
        assert_eq!(timestamp::format(&n.records[0].last_reported), "2023-01-01T05:00:00Z");
        assert_eq!(n.rejects[0].reason, RejectReason::UnsupportedType("Mutex".into()));
    }

    #[test]
    fn anomali_ports_field() {
        let payload = r#"{"objects":[{"value":"1.2.3.4","type":"ip","created_ts":"2023-01-01T10:00:00Z","ports":[23,"2323"]}]}"#;
        let n = normalize(&source(SourceId::Anomali), payload).unwrap();
        assert_eq!(n.records[0].ports, Some(vec![23, 2323]));
    }
}
