//! Session registry: serial turns per session, state persisted after every turn.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use rand::RngCore;
use sentinel_core::dialogue::{Decision, DialogState, Engine};
use sentinel_core::domain::canonical::{self, to_canonical_string};
use sentinel_core::domain::AgentTurn;
use sentinel_core::events::{EventKind, EventSink};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{broadcast, Mutex};

use crate::audit::{AuditEntry, AuditLog};
use crate::error::ServiceError;

const STREAM_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    #[serde(with = "canonical::timestamp")]
    pub created_at: DateTime<Utc>,
    pub state: DialogState,
    #[serde(with = "canonical::timestamp")]
    pub last_activity: DateTime<Utc>,
}

/// What WebSocket subscribers receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    /// A turn started or finished processing; carries no model output.
    Progress { stage: String, queued: usize },
    Event { entry: AuditEntry },
    Turn { turn: AgentTurn },
}

enum Input<'a> {
    Message(&'a str),
    Decision(Decision),
}

struct Slot {
    record: Mutex<SessionRecord>,
    waiting: AtomicUsize,
    stream: broadcast::Sender<StreamEvent>,
}

/// Decrements the waiting count however the turn ends.
struct Waiting<'a>(&'a AtomicUsize);

impl Drop for Waiting<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Audits each pipeline event and fans it out to subscribers.
struct TurnSink<'a> {
    audit: &'a AuditLog,
    session_id: &'a str,
    stream: &'a broadcast::Sender<StreamEvent>,
    failed: parking_lot::Mutex<Option<std::io::Error>>,
}

impl EventSink for TurnSink<'_> {
    fn emit(&self, kind: EventKind, payload: Value) {
        match self.audit.append(self.session_id, kind, payload) {
            Ok(entry) => {
                let _ = self.stream.send(StreamEvent::Event { entry });
            }
            Err(e) => {
                tracing::error!(session = self.session_id, error = %e, "audit append failed");
                self.failed.lock().get_or_insert(e);
            }
        }
    }
}

pub struct SessionManager {
    engine: Arc<Engine>,
    audit: Arc<AuditLog>,
    dir: Option<PathBuf>,
    slots: RwLock<HashMap<String, Arc<Slot>>>,
    queue_depth: usize,
    max_message_bytes: usize,
}

pub fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl SessionManager {
    /// `dir` of `None` keeps sessions in memory only.
    pub fn new(engine: Arc<Engine>, audit: Arc<AuditLog>, dir: Option<PathBuf>, queue_depth: usize, max_message_bytes: usize) -> SessionManager {
        SessionManager { engine, audit, dir, slots: RwLock::new(HashMap::new()), queue_depth, max_message_bytes }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn create(&self) -> Result<SessionRecord, ServiceError> {
        let id = new_session_id();
        let state = self.engine.new_session(id.clone()).map_err(ServiceError::from)?;
        let now = self.engine.now();
        let record = SessionRecord { session_id: id.clone(), created_at: now, state, last_activity: now };
        self.persist(&record)?;
        let (stream, _) = broadcast::channel(STREAM_CAPACITY);
        let slot = Slot { record: Mutex::new(record.clone()), waiting: AtomicUsize::new(0), stream };
        self.slots.write().insert(id, Arc::new(slot));
        Ok(record)
    }

    fn path_for(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn persist(&self, record: &SessionRecord) -> Result<(), ServiceError> {
        let Some(path) = self.path_for(&record.session_id) else { return Ok(()) };
        let text = to_canonical_string(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_durably(&path, text.as_bytes()).map_err(|e| ServiceError::Internal(format!("persisting session: {e}")))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        if let Some(s) = self.slots.read().get(id) {
            return Ok(s.clone());
        }
        if !valid_id(id) {
            return Err(ServiceError::UnknownSession(id.to_string()));
        }
        let path = self.path_for(id).ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        let text = std::fs::read_to_string(&path).map_err(|_| ServiceError::UnknownSession(id.to_string()))?;
        let record: SessionRecord =
            serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("session {id} is unreadable: {e}")))?;
        let mut slots = self.slots.write();
        let slot = slots.entry(id.to_string()).or_insert_with(|| {
            let (stream, _) = broadcast::channel(STREAM_CAPACITY);
            Arc::new(Slot { record: Mutex::new(record), waiting: AtomicUsize::new(0), stream })
        });
        Ok(slot.clone())
    }

    pub async fn get(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let slot = self.slot(id)?;
        let record = slot.record.lock().await;
        Ok(record.clone())
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<StreamEvent>, ServiceError> {
        Ok(self.slot(id)?.stream.subscribe())
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<AgentTurn, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("message is empty".into()));
        }
        if text.len() > self.max_message_bytes {
            return Err(ServiceError::BadRequest(format!("message exceeds {} bytes", self.max_message_bytes)));
        }
        self.run_turn(id, Input::Message(text)).await
    }

    pub async fn confirm(&self, id: &str, decision: Decision) -> Result<AgentTurn, ServiceError> {
        self.run_turn(id, Input::Decision(decision)).await
    }

    async fn run_turn(&self, id: &str, input: Input<'_>) -> Result<AgentTurn, ServiceError> {
        let slot = self.slot(id)?;
        // one in flight plus `queue_depth` waiting
        let ahead = slot.waiting.fetch_add(1, Ordering::SeqCst);
        let _waiting = Waiting(&slot.waiting);
        if ahead > self.queue_depth {
            return Err(ServiceError::Busy);
        }
        let _ = slot.stream.send(StreamEvent::Progress { stage: "queued".into(), queued: ahead });
        let mut record = slot.record.lock().await;
        let _ = slot.stream.send(StreamEvent::Progress { stage: "started".into(), queued: 0 });
        let sink = TurnSink { audit: &self.audit, session_id: id, stream: &slot.stream, failed: parking_lot::Mutex::new(None) };
        let result = match input {
            Input::Message(text) => self.engine.next_turn(&record.state, text, &sink).await,
            Input::Decision(d) => self.engine.confirm(&record.state, d, &sink).await,
        };
        if let Some(e) = sink.failed.lock().take() {
            return Err(ServiceError::Internal(format!("audit log: {e}")));
        }
        let (state, turn) = result.map_err(ServiceError::from)?;
        let mut next = record.clone();
        next.state = state;
        next.last_activity = self.engine.now();
        self.persist(&next)?;
        *record = next;
        let _ = slot.stream.send(StreamEvent::Turn { turn: turn.clone() });
        let _ = slot.stream.send(StreamEvent::Progress { stage: "finished".into(), queued: 0 });
        Ok(turn)
    }
}

/// Write to a temporary sibling, sync, then rename over `path`.
pub fn write_durably(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(std::path::Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    if let Ok(d) = std::fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_long_random_hex() {
        let a = new_session_id();
        let b = new_session_id();
        assert_ne!(a, b);
        assert!(valid_id(&a) && valid_id(&b));
        assert!(!valid_id("../../etc/passwd"));
    }
}
