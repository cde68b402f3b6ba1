use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IocRecord, Signature, SignatureType, SourceId, TimeWindow};

/// Result size used when a filter carries no explicit limit.
pub const DEFAULT_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("index type {index_type} does not agree with a {signature} signature")]
    KindMismatch { index_type: SignatureType, signature: SignatureType },
    #[error("time window starts after it ends")]
    InvertedWindow,
}

/// Conjunction of optional clauses over stored records.
///
/// A Subnet signature matches IP records inside the block (and an equal stored
/// Subnet); a Port signature matches any record whose port list contains it.
/// Windows apply to `last_reported` and are inclusive at both ends.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreFilter {
    pub index_type: Option<SignatureType>,
    pub signature: Option<Signature>,
    #[serde(default)]
    pub window: TimeWindow,
    pub sources: Option<Vec<SourceId>>,
    pub limit: Option<NonZeroUsize>,
}

impl StoreFilter {
    pub fn validate(&self) -> Result<(), FilterError> {
        self.window.validate().map_err(|_| FilterError::InvertedWindow)?;
        if let (Some(index_type), Some(sig)) = (self.index_type, &self.signature) {
            let agree = index_type == sig.kind || (index_type == SignatureType::Ip && sig.kind == SignatureType::Subnet);
            if !agree {
                return Err(FilterError::KindMismatch { index_type, signature: sig.kind });
            }
        }
        Ok(())
    }

    pub fn effective_limit(&self) -> usize {
        self.limit.map_or(DEFAULT_LIMIT, NonZeroUsize::get)
    }

    pub fn without_limit(&self) -> StoreFilter {
        StoreFilter { limit: None, ..self.clone() }
    }

    pub fn matches(&self, record: &IocRecord) -> bool {
        self.matches_signature(record)
            && self.window.contains(record.last_reported)
            && self.sources.as_ref().is_none_or(|s| s.contains(&record.source))
    }

    fn matches_signature(&self, record: &IocRecord) -> bool {
        let Some(sig) = &self.signature else {
            return match self.index_type {
                None => true,
                Some(SignatureType::Port) => record.ports.as_ref().is_some_and(|p| !p.is_empty()),
                Some(kind) => record.signature.kind == kind,
            };
        };
        match sig.kind {
            SignatureType::Port => sig.port().is_some_and(|p| record.has_port(p)),
            SignatureType::Subnet => {
                let Some(block) = sig.cidr() else { return false };
                match record.signature.kind {
                    SignatureType::Ip => record.signature.ip().is_some_and(|ip| block.contains(ip)),
                    SignatureType::Subnet => self.index_type != Some(SignatureType::Ip) && record.signature.value == sig.value,
                    _ => false,
                }
            }
            _ => record.signature == *sig,
        }
    }

    /// Short human description, used in summaries.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        match (&self.signature, self.index_type) {
            (Some(sig), _) => parts.push(format!("{} {}", sig.kind, sig.value)),
            (None, Some(kind)) => parts.push(format!("type {kind}")),
            (None, None) => parts.push("all indicators".to_string()),
        }
        if !self.window.is_unbounded() {
            parts.push(format!("reported {}", self.window));
        }
        if let Some(sources) = &self.sources {
            let names: Vec<&str> = sources.iter().map(|s| s.as_str()).collect();
            parts.push(format!("from {}", names.join(", ")));
        }
        parts.join(", ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_signature;
    use chrono::{TimeZone, Utc};

    fn rec(value: &str, ports: Option<Vec<u16>>) -> IocRecord {
        let t = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        IocRecord::new(SourceId::AbuseUrl, parse_signature(value, None).unwrap(), t, t, "", ports, "").unwrap()
    }

    #[test]
    fn agreement_rules() {
        let sub = parse_signature("54.12.0.0/16", None).unwrap();
        let ok = StoreFilter { index_type: Some(SignatureType::Ip), signature: Some(sub.clone()), ..Default::default() };
        ok.validate().unwrap();
        let bad = StoreFilter { index_type: Some(SignatureType::Hash), signature: Some(sub), ..Default::default() };
        assert!(matches!(bad.validate(), Err(FilterError::KindMismatch { .. })));
    }

    #[test]
    fn subnet_and_port_semantics() {
        let f = StoreFilter { signature: Some(parse_signature("54.12.0.0/16", None).unwrap()), ..Default::default() };
        assert!(f.matches(&rec("54.12.3.7", None)));
        assert!(f.matches(&rec("54.12.0.0/16", None)));
        assert!(!f.matches(&rec("54.13.0.1", None)));
        let p = StoreFilter { signature: Some(parse_signature("9000", None).unwrap()), ..Default::default() };
        assert!(p.matches(&rec("http://a.example/x", Some(vec![9000]))));
        assert!(!p.matches(&rec("http://a.example/x", Some(vec![23]))));
        assert!(!p.matches(&rec("http://a.example/x", None)));
    }
}
