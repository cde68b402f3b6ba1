//! OSINT feed ingestion: fetch, normalize into [`IocRecord`]s, upsert.
//!
//! Field mappings are data (`feeds/mappings.toml`), so a feed that changes
//! its payload layout only needs a config edit.
//!
//! [`IocRecord`]: crate::domain::IocRecord

mod fetch;
mod normalize;
mod sync;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{SignatureType, SourceId};
use crate::store::StoreError;

pub use fetch::{FeedFetcher, RetryPolicy};
pub use normalize::{normalize, Normalized, Reject, RejectReason};
pub use sync::{run_polling, sync, FeedSyncer, OverlapPolicy, SyncReport, DEFAULT_POLL_INTERVAL};

/// Mapping tables shipped with the crate.
pub const DEFAULT_MAPPINGS: &str = include_str!("../../feeds/mappings.toml");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedError {
    #[error("feed {feed} unavailable: {reason}")]
    FeedUnavailable { feed: SourceId, reason: String },
    #[error("feed {0} rejected the credentials")]
    AuthRejected(SourceId),
    #[error("malformed {feed} payload: {reason}")]
    MalformedPayload { feed: SourceId, reason: String },
    #[error("invalid feed mapping: {0}")]
    Mapping(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    #[default]
    Get,
    Post,
}

/// How one feed's payload maps onto record fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedMapping {
    pub endpoint: String,
    #[serde(default)]
    pub method: HttpMethod,
    #[serde(default)]
    pub form: BTreeMap<String, String>,
    pub auth_header: Option<String>,
    #[serde(default)]
    pub auth_prefix: String,
    pub since_param: Option<String>,
    pub entries: Vec<String>,
    pub indicator: Vec<String>,
    pub kind: Option<SignatureType>,
    pub kind_field: Option<String>,
    #[serde(default)]
    pub kind_map: BTreeMap<String, SignatureType>,
    pub first_seen: Vec<String>,
    #[serde(default)]
    pub last_seen: Vec<String>,
    #[serde(default)]
    pub threat: Vec<String>,
    pub ports_field: Option<String>,
    #[serde(default)]
    pub port_from_url: bool,
}

impl FeedMapping {
    fn validate(&self) -> Result<(), String> {
        if self.indicator.is_empty() || self.first_seen.is_empty() {
            return Err("indicator and first_seen need at least one field".into());
        }
        match (&self.kind, &self.kind_field) {
            (Some(_), None) => Ok(()),
            (None, Some(_)) if !self.kind_map.is_empty() => Ok(()),
            _ => Err("set exactly one of `kind` or `kind_field` (with a kind_map)".into()),
        }
    }
}

/// A configured feed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedSource {
    pub id: SourceId,
    pub mapping: FeedMapping,
}

impl FeedSource {
    pub fn endpoint(&self) -> &str {
        &self.mapping.endpoint
    }

    /// Name of the environment variable the API key is read from.
    pub fn auth_env(&self) -> String {
        self.id.key_env_var()
    }
}

/// The full set of configured feeds; always covers all five sources.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedCatalog {
    sources: BTreeMap<SourceId, FeedSource>,
}

impl FeedCatalog {
    pub fn from_toml(text: &str) -> Result<FeedCatalog, FeedError> {
        let table: BTreeMap<String, FeedMapping> = toml::from_str(text).map_err(|e| FeedError::Mapping(e.to_string()))?;
        let mut sources = BTreeMap::new();
        for (name, mapping) in table {
            let id: SourceId = name.parse().map_err(|_| FeedError::Mapping(format!("unknown source `{name}`")))?;
            mapping.validate().map_err(|e| FeedError::Mapping(format!("{name}: {e}")))?;
            sources.insert(id, FeedSource { id, mapping });
        }
        if let Some(missing) = SourceId::ALL.iter().find(|id| !sources.contains_key(id)) {
            return Err(FeedError::Mapping(format!("no mapping for `{missing}`")));
        }
        Ok(FeedCatalog { sources })
    }

    pub fn get(&self, id: SourceId) -> &FeedSource {
        // from_toml guarantees every id is present
        &self.sources[&id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedSource> {
        self.sources.values()
    }
}

impl Default for FeedCatalog {
    fn default() -> Self {
        FeedCatalog::from_toml(DEFAULT_MAPPINGS).expect("shipped feed mappings are valid")
    }
}
