//! On-disk layout: `snapshot.ndjson` (compacted, sorted by id) plus
//! `records.log` (append-only). Both hold one canonical record per line.
//! Replay applies the snapshot then every log line; a later line for the
//! same id replaces the earlier one.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::domain::{from_canonical_str, to_canonical_string, IocRecord};

use super::StoreError;

pub const SNAPSHOT_FILE: &str = "snapshot.ndjson";
pub const LOG_FILE: &str = "records.log";

pub(crate) struct Persist {
    dir: PathBuf,
    log: File,
    pub(crate) log_lines: usize,
}

impl Persist {
    /// Opens the directory, returning the persisted records in replay order.
    pub(crate) fn open(dir: &Path) -> Result<(Persist, Vec<IocRecord>), StoreError> {
        fs::create_dir_all(dir)?;
        let mut records = Vec::new();
        let snapshot = dir.join(SNAPSHOT_FILE);
        if snapshot.exists() {
            let text = fs::read_to_string(&snapshot)?;
            records.extend(decode_lines(&text, false)?.0);
        }
        let log_path = dir.join(LOG_FILE);
        let mut log_lines = 0;
        if log_path.exists() {
            let mut text = String::new();
            File::open(&log_path)?.read_to_string(&mut text)?;
            let (logged, good_len) = decode_lines(&text, true)?;
            if good_len < text.len() {
                // torn final write from a crash: drop it
                let f = OpenOptions::new().write(true).open(&log_path)?;
                f.set_len(good_len as u64)?;
                f.sync_all()?;
            }
            log_lines = logged.len();
            records.extend(logged);
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok((Persist { dir: dir.to_path_buf(), log, log_lines }, records))
    }

    /// Appends and fsyncs one commit.
    pub(crate) fn append(&mut self, records: &[&IocRecord]) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for r in records {
            buf.push_str(&encode(r)?);
            buf.push('\n');
        }
        self.log.write_all(buf.as_bytes())?;
        self.log.sync_data()?;
        self.log_lines += records.len();
        Ok(())
    }

    /// Writes a fresh snapshot and empties the log.
    pub(crate) fn compact<'a>(&mut self, records: impl Iterator<Item = &'a IocRecord>) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            write_ndjson(records, &mut f)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.log.set_len(0)?;
        self.log.sync_all()?;
        self.log_lines = 0;
        Ok(())
    }
}

pub(crate) fn encode(r: &IocRecord) -> Result<String, StoreError> {
    to_canonical_string(r).map_err(|e| StoreError::Corrupt { line: 0, reason: e.to_string() })
}

/// Writes records, sorted by id, one per line.
pub fn write_ndjson<'a>(records: impl Iterator<Item = &'a IocRecord>, out: &mut impl Write) -> Result<(), StoreError> {
    let mut sorted: Vec<&IocRecord> = records.collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for r in sorted {
        out.write_all(encode(r)?.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses newline-delimited records. Blank lines are skipped.
pub fn read_ndjson(input: impl Read) -> Result<Vec<IocRecord>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn decode_line(line: &str, lineno: usize) -> Result<IocRecord, StoreError> {
    let record: IocRecord = from_canonical_str(line).map_err(|e| StoreError::Corrupt { line: lineno, reason: e.to_string() })?;
    record
        .validate()
        .map_err(|e| StoreError::Corrupt { line: lineno, reason: e.to_string() })?;
    Ok(record)
}

/// Decodes all lines. With `tolerate_torn_tail`, an unterminated final line
/// is dropped; the returned length is the byte length of the accepted prefix.
fn decode_lines(text: &str, tolerate_torn_tail: bool) -> Result<(Vec<IocRecord>, usize), StoreError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let terminated = line.ends_with('\n');
        if !terminated && tolerate_torn_tail {
            // a commit always ends with its newline before the fsync returns
            return Ok((out, offset));
        }
        let body = line.trim_end_matches('\n');
        if !body.trim().is_empty() {
            out.push(decode_line(body, i + 1)?);
        }
        offset += line.len();
    }
    Ok((out, offset))
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}
