//! Embedded, time-indexed IoC store.
//!
//! Records live in memory behind a reader/writer lock with secondary indexes
//! by value, kind, port, address and report time. When opened on a directory
//! every commit is appended to a log and fsynced before it becomes visible.

mod filter;
pub mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::signature::ip_key;
use crate::domain::{IocRecord, Signature, SignatureType, SourceId, TimeWindow};

pub use filter::{FilterError, StoreFilter, DEFAULT_LIMIT};
use persist::Persist;

/// Log length after which a commit also rewrites the snapshot.
pub const DEFAULT_COMPACT_THRESHOLD: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    InvalidFilter(#[from] FilterError),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub inserted: usize,
    pub updated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryResult {
    pub records: Vec<IocRecord>,
    pub total_matched: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusVerdict {
    pub found: bool,
    pub records: Vec<IocRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub window: TimeWindow,
    pub counts_by_kind: BTreeMap<SignatureType, usize>,
    pub counts_by_source: BTreeMap<SourceId, usize>,
    pub total: usize,
}

/// Result ordering: newest report first, then id ascending.
pub fn result_order(a: &IocRecord, b: &IocRecord) -> std::cmp::Ordering {
    b.last_reported.cmp(&a.last_reported).then_with(|| a.id.cmp(&b.id))
}

#[derive(Default)]
struct Index {
    records: HashMap<String, IocRecord>,
    by_time: BTreeSet<(DateTime<Utc>, String)>,
    by_value: HashMap<(SignatureType, String), BTreeSet<String>>,
    by_kind: HashMap<SignatureType, BTreeSet<String>>,
    by_port: HashMap<u16, BTreeSet<String>>,
    by_addr: BTreeMap<(u8, u128), BTreeSet<String>>,
}

impl Index {
    fn insert(&mut self, r: IocRecord) {
        if let Some(old) = self.records.remove(&r.id) {
            self.unindex(&old);
        }
        let id = r.id.clone();
        self.by_time.insert((r.last_reported, id.clone()));
        self.by_value
            .entry((r.signature.kind, r.signature.value.clone()))
            .or_default()
            .insert(id.clone());
        self.by_kind.entry(r.signature.kind).or_default().insert(id.clone());
        for p in r.ports.iter().flatten() {
            self.by_port.entry(*p).or_default().insert(id.clone());
        }
        if let Some(ip) = r.signature.ip() {
            self.by_addr.entry(ip_key(ip)).or_default().insert(id.clone());
        }
        self.records.insert(id, r);
    }

    fn unindex(&mut self, r: &IocRecord) {
        fn drop_from<K: std::hash::Hash + Eq>(m: &mut HashMap<K, BTreeSet<String>>, k: K, id: &str) {
            if let Some(set) = m.get_mut(&k) {
                set.remove(id);
                if set.is_empty() {
                    m.remove(&k);
                }
            }
        }
        self.by_time.remove(&(r.last_reported, r.id.clone()));
        drop_from(&mut self.by_value, (r.signature.kind, r.signature.value.clone()), &r.id);
        drop_from(&mut self.by_kind, r.signature.kind, &r.id);
        for p in r.ports.iter().flatten() {
            drop_from(&mut self.by_port, *p, &r.id);
        }
        if let Some(ip) = r.signature.ip() {
            let key = ip_key(ip);
            if let Some(set) = self.by_addr.get_mut(&key) {
                set.remove(&r.id);
                if set.is_empty() {
                    self.by_addr.remove(&key);
                }
            }
        }
    }

    fn ids_in_window(&self, w: &TimeWindow) -> Vec<&String> {
        use std::ops::Bound;
        let lo = match w.from_date {
            Some(f) => Bound::Included((f, String::new())),
            None => Bound::Unbounded,
        };
        let hi = match w.to_date {
            // ids are hex, so `~` sorts after every id at that instant
            Some(t) => Bound::Included((t, "~".to_string())),
            None => Bound::Unbounded,
        };
        self.by_time.range((lo, hi)).map(|(_, id)| id).collect()
    }

    /// Smallest candidate set the filter's clauses allow; always a superset of the matches.
    fn candidates(&self, f: &StoreFilter) -> Vec<&IocRecord> {
        let ids: Vec<&String> = match (&f.signature, f.index_type) {
            (Some(sig), _) => match sig.kind {
                SignatureType::Port => sig
                    .port()
                    .and_then(|p| self.by_port.get(&p))
                    .map(|s| s.iter().collect())
                    .unwrap_or_default(),
                SignatureType::Subnet => {
                    let mut ids: Vec<&String> = Vec::new();
                    if let Some(block) = sig.cidr() {
                        let (lo, hi) = block.key_range();
                        ids.extend(self.by_addr.range(lo..=hi).flat_map(|(_, s)| s.iter()));
                    }
                    if let Some(s) = self.by_value.get(&(sig.kind, sig.value.clone())) {
                        ids.extend(s.iter());
                    }
                    ids
                }
                _ => self
                    .by_value
                    .get(&(sig.kind, sig.value.clone()))
                    .map(|s| s.iter().collect())
                    .unwrap_or_default(),
            },
            (None, _) if !f.window.is_unbounded() => self.ids_in_window(&f.window),
            (None, Some(kind)) if kind != SignatureType::Port => {
                self.by_kind.get(&kind).map(|s| s.iter().collect()).unwrap_or_default()
            }
            _ => self.records.keys().collect(),
        };
        ids.into_iter().filter_map(|id| self.records.get(id)).collect()
    }

    fn matching(&self, f: &StoreFilter) -> Vec<&IocRecord> {
        let mut hits: Vec<&IocRecord> = self.candidates(f).into_iter().filter(|r| f.matches(r)).collect();
        hits.sort_by(|a, b| result_order(a, b));
        hits
    }
}

struct Inner {
    index: Index,
    persist: Option<Persist>,
    compact_threshold: usize,
}

/// The IoC signature store. Safe to share; many readers, one writer.
pub struct IocStore {
    inner: RwLock<Inner>,
}

impl IocStore {
    pub fn in_memory() -> IocStore {
        IocStore {
            inner: RwLock::new(Inner {
                index: Index::default(),
                persist: None,
                compact_threshold: DEFAULT_COMPACT_THRESHOLD,
            }),
        }
    }

    /// Opens (or creates) a persistent store rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<IocStore, StoreError> {
        let (persist, records) = Persist::open(dir.as_ref())?;
        let mut index = Index::default();
        for r in records {
            index.insert(r);
        }
        Ok(IocStore {
            inner: RwLock::new(Inner {
                index,
                persist: Some(persist),
                compact_threshold: DEFAULT_COMPACT_THRESHOLD,
            }),
        })
    }

    pub fn set_compact_threshold(&self, lines: usize) {
        self.inner.write().compact_threshold = lines.max(1);
    }

    pub fn len(&self) -> usize {
        self.inner.read().index.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<IocRecord> {
        self.inner.read().index.records.get(id).cloned()
    }

    /// Inserts new records and merges re-reported ones.
    ///
    /// On merge the report span widens to cover both reports; label, ports and
    /// raw payload come from whichever report is at least as recent.
    pub fn upsert_records(&self, batch: Vec<IocRecord>) -> Result<IngestReport, StoreError> {
        for r in &batch {
            r.validate().map_err(|e| StoreError::InvalidRecord(e.to_string()))?;
        }
        let mut guard = self.inner.write();
        let inner = &mut *guard;
        let mut report = IngestReport::default();
        let mut staged: BTreeMap<String, IocRecord> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for incoming in batch {
            let existing = staged.get(&incoming.id).or_else(|| inner.index.records.get(&incoming.id));
            let merged = match existing {
                Some(old) => {
                    report.updated += 1;
                    merge_report(old, incoming)
                }
                None => {
                    report.inserted += 1;
                    incoming
                }
            };
            if !staged.contains_key(&merged.id) {
                order.push(merged.id.clone());
            }
            staged.insert(merged.id.clone(), merged);
        }
        if let Some(p) = inner.persist.as_mut() {
            let lines: Vec<&IocRecord> = order.iter().map(|id| &staged[id]).collect();
            p.append(&lines)?;
        }
        for (_, r) in staged {
            inner.index.insert(r);
        }
        if let Some(p) = inner.persist.as_mut() {
            if p.log_lines >= inner.compact_threshold {
                p.compact(inner.index.records.values())?;
            }
        }
        Ok(report)
    }

    pub fn query(&self, filter: &StoreFilter) -> Result<QueryResult, StoreError> {
        filter.validate()?;
        let inner = self.inner.read();
        let hits = inner.index.matching(filter);
        let total_matched = hits.len();
        let records: Vec<IocRecord> = hits.into_iter().take(filter.effective_limit()).cloned().collect();
        let truncated = total_matched > records.len();
        Ok(QueryResult { records, total_matched, truncated })
    }

    pub fn count(&self, filter: &StoreFilter) -> Result<usize, StoreError> {
        filter.validate()?;
        Ok(self.inner.read().index.matching(filter).len())
    }

    /// Exact match, or containment when the stored record is a Subnet.
    pub fn lookup_status(&self, signature: &Signature) -> StatusVerdict {
        let inner = self.inner.read();
        let idx = &inner.index;
        let mut hits: Vec<&IocRecord> = idx
            .by_value
            .get(&(signature.kind, signature.value.clone()))
            .into_iter()
            .flatten()
            .filter_map(|id| idx.records.get(id))
            .collect();
        if let Some(ip) = signature.ip() {
            hits.extend(
                idx.by_kind
                    .get(&SignatureType::Subnet)
                    .into_iter()
                    .flatten()
                    .filter_map(|id| idx.records.get(id))
                    .filter(|r| r.signature.cidr().is_some_and(|c| c.contains(ip))),
            );
        }
        hits.sort_by(|a, b| result_order(a, b));
        StatusVerdict { found: !hits.is_empty(), records: hits.into_iter().cloned().collect() }
    }

    pub fn stats(&self, window: &TimeWindow) -> Result<StoreStats, StoreError> {
        window.validate().map_err(|_| FilterError::InvertedWindow)?;
        let inner = self.inner.read();
        let idx = &inner.index;
        let mut counts_by_kind: BTreeMap<SignatureType, usize> = SignatureType::ALL.iter().map(|k| (*k, 0)).collect();
        let mut counts_by_source: BTreeMap<SourceId, usize> = SourceId::ALL.iter().map(|s| (*s, 0)).collect();
        let mut total = 0;
        for id in idx.ids_in_window(window) {
            let r = &idx.records[id];
            *counts_by_kind.entry(r.signature.kind).or_default() += 1;
            *counts_by_source.entry(r.source).or_default() += 1;
            total += 1;
        }
        Ok(StoreStats { window: *window, counts_by_kind, counts_by_source, total })
    }

    /// Every record, sorted by id.
    pub fn all_records(&self) -> Vec<IocRecord> {
        let inner = self.inner.read();
        let mut all: Vec<IocRecord> = inner.index.records.values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }

    /// Writes every record in the snapshot format.
    pub fn export(&self, out: &mut impl Write) -> Result<(), StoreError> {
        let inner = self.inner.read();
        persist::write_ndjson(inner.index.records.values(), out)
    }

    pub fn import(&self, input: impl Read) -> Result<IngestReport, StoreError> {
        let records = persist::read_ndjson(input)?;
        self.upsert_records(records)
    }

    /// Rewrites the snapshot and truncates the log. No-op for in-memory stores.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut guard = self.inner.write();
        let inner = &mut *guard;
        if let Some(p) = inner.persist.as_mut() {
            p.compact(inner.index.records.values())?;
        }
        Ok(())
    }
}

fn merge_report(old: &IocRecord, new: IocRecord) -> IocRecord {
    let first_reported = old.first_reported.min(new.first_reported);
    let last_reported = old.last_reported.max(new.last_reported);
    let (threat_label, ports, raw) = if new.last_reported >= old.last_reported {
        (new.threat_label, new.ports, new.raw)
    } else {
        (old.threat_label.clone(), old.ports.clone(), old.raw.clone())
    };
    IocRecord { first_reported, last_reported, threat_label, ports, raw, ..new }
}
