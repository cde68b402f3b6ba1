use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Mutex};

use crate::domain::canonical;
use crate::domain::SourceId;
use crate::store::IocStore;

use super::{normalize, FeedCatalog, FeedError, FeedFetcher, FeedSource};

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(15 * 60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub source: SourceId,
    pub fetched: usize,
    pub normalized: usize,
    pub rejected: usize,
    pub inserted: usize,
    pub updated: usize,
    #[serde(with = "canonical::timestamp")]
    pub started: DateTime<Utc>,
    #[serde(with = "canonical::timestamp")]
    pub finished: DateTime<Utc>,
}

/// One fetch → normalize → upsert pass. The store is untouched when fetching fails.
pub async fn sync(fetcher: &FeedFetcher, source: &FeedSource, store: &IocStore) -> Result<SyncReport, FeedError> {
    let started = Utc::now();
    let payload = fetcher.fetch(source, None).await?;
    let normalized = normalize(source, &payload)?;
    let fetched = normalized.fetched();
    let rejected = normalized.rejects.len();
    for r in &normalized.rejects {
        tracing::debug!(source = %source.id, reason = r.reason.code(), "rejected feed entry");
    }
    let n = normalized.records.len();
    let ingest = store.upsert_records(normalized.records)?;
    Ok(SyncReport {
        source: source.id,
        fetched,
        normalized: n,
        rejected,
        inserted: ingest.inserted,
        updated: ingest.updated,
        started,
        finished: Utc::now(),
    })
}

/// What to do when a sync for a source is requested while one is running.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPolicy {
    /// Wait for the running sync, then run again.
    #[default]
    Queue,
    /// Return immediately without syncing.
    Skip,
}

/// Runs syncs with at most one in flight per source.
pub struct FeedSyncer {
    catalog: FeedCatalog,
    fetcher: FeedFetcher,
    policy: OverlapPolicy,
    locks: BTreeMap<SourceId, Arc<Mutex<()>>>,
}

impl FeedSyncer {
    pub fn new(catalog: FeedCatalog, fetcher: FeedFetcher, policy: OverlapPolicy) -> FeedSyncer {
        let locks = SourceId::ALL.iter().map(|id| (*id, Arc::new(Mutex::new(())))).collect();
        FeedSyncer { catalog, fetcher, policy, locks }
    }

    pub fn catalog(&self) -> &FeedCatalog {
        &self.catalog
    }

    /// `Ok(None)` when skipped because another sync of the source is running.
    pub async fn sync(&self, id: SourceId, store: &IocStore) -> Result<Option<SyncReport>, FeedError> {
        let lock = &self.locks[&id];
        let _guard = match self.policy {
            OverlapPolicy::Queue => lock.lock().await,
            OverlapPolicy::Skip => match lock.try_lock() {
                Ok(g) => g,
                Err(_) => return Ok(None),
            },
        };
        sync(&self.fetcher, self.catalog.get(id), store).await.map(Some)
    }

    /// Syncs every source concurrently; results are in source order.
    pub async fn sync_all(&self, store: &IocStore) -> Vec<(SourceId, Result<Option<SyncReport>, FeedError>)> {
        let runs = SourceId::ALL.iter().map(|id| async move { (*id, self.sync(*id, store).await) });
        futures::future::join_all(runs).await
    }
}

/// Polls every source on `interval` until `shutdown` flips to true.
pub async fn run_polling(syncer: Arc<FeedSyncer>, store: Arc<IocStore>, interval: Duration, mut shutdown: watch::Receiver<bool>) {
    let mut ticker = tokio::time::interval(interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                for (id, res) in syncer.sync_all(&store).await {
                    match res {
                        Ok(Some(r)) => tracing::info!(source = %id, fetched = r.fetched, inserted = r.inserted, updated = r.updated, "feed synced"),
                        Ok(None) => tracing::debug!(source = %id, "sync already running"),
                        Err(e) => tracing::warn!(source = %id, error = %e, "feed sync failed"),
                    }
                }
            }
            changed = shutdown.changed() => {
                if changed.is_err() || *shutdown.borrow() {
                    break;
                }
            }
        }
    }
}
