//! Append-only audit log: one canonical JSON entry per line, fsynced per entry.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use sentinel_core::domain::canonical::{self, timestamp};
use sentinel_core::events::EventKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const REDACTED: &str = "[redacted]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Position in the whole log; gaps never occur.
    pub seq: u64,
    #[serde(with = "canonical::timestamp")]
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    pub kind: EventKind,
    pub payload: Value,
}

struct Writer {
    file: File,
    next_seq: u64,
}

pub struct AuditLog {
    path: PathBuf,
    writer: Mutex<Writer>,
    redact_keys: Vec<String>,
}

/// Entries from `path`, ignoring a torn final line. A missing file is empty.
pub fn read_entries(path: &Path) -> std::io::Result<Vec<AuditEntry>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AuditEntry>(&line) {
            Ok(e) => out.push(e),
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "skipping unreadable audit line");
            }
        }
    }
    Ok(out)
}

/// Replaces the value under every key named in `keys`, at any depth.
pub fn redact(value: &mut Value, keys: &[String]) {
    match value {
        Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if keys.iter().any(|r| r == k) {
                    *v = Value::String(REDACTED.into());
                } else {
                    redact(v, keys);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| redact(v, keys)),
        _ => {}
    }
}

impl AuditLog {
    /// Opens or creates the log, cutting off a partially written last line.
    pub fn open(path: impl Into<PathBuf>, redact_keys: Vec<String>) -> std::io::Result<AuditLog> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let data = std::fs::read(&path)?;
        let keep = data.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        if keep < data.len() {
            tracing::warn!(path = %path.display(), dropped = data.len() - keep, "truncating torn audit tail");
            file.set_len(keep as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_seq = read_entries(&path)?.last().map_or(0, |e| e.seq + 1);
        Ok(AuditLog { path, writer: Mutex::new(Writer { file, next_seq }), redact_keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes and syncs one entry; it is committed once this returns.
    pub fn append(&self, session_id: &str, kind: EventKind, mut payload: Value) -> std::io::Result<AuditEntry> {
        redact(&mut payload, &self.redact_keys);
        let mut w = self.writer.lock();
        let entry = AuditEntry { seq: w.next_seq, timestamp: now(), session_id: session_id.to_string(), kind, payload };
        let mut line = canonical::to_canonical_string(&entry).map_err(std::io::Error::other)?;
        line.push('\n');
        w.file.write_all(line.as_bytes())?;
        w.file.sync_data()?;
        w.next_seq += 1;
        Ok(entry)
    }

    /// Committed entries, optionally for one session, in log order.
    pub fn entries(&self, session_id: Option<&str>) -> std::io::Result<Vec<AuditEntry>> {
        // holding the writer lock keeps readers from seeing a half-written line
        let _w = self.writer.lock();
        let mut all = read_entries(&self.path)?;
        if let Some(id) = session_id {
            all.retain(|e| e.session_id == id);
        }
        Ok(all)
    }
}

fn now() -> DateTime<Utc> {
    timestamp::parse_lenient(&timestamp::format(&Utc::now())).unwrap_or_else(Utc::now)
}
