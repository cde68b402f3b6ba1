use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CdbError {
    #[error("invalid CDB key {0:?}")]
    InvalidKey(String),
    #[error("invalid CDB value {0:?}")]
    InvalidValue(String),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

pub fn check_key(key: &str) -> Result<(), CdbError> {
    if key.is_empty() || key.contains([':', '\n', '\r']) {
        return Err(CdbError::InvalidKey(key.to_string()));
    }
    Ok(())
}

fn check_value(value: &str) -> Result<(), CdbError> {
    if value.contains(['\n', '\r']) {
        return Err(CdbError::InvalidValue(value.to_string()));
    }
    Ok(())
}

/// One `key:value` line per entry, keys ascending bytewise, LF endings.
pub fn render_cdb(entries: &BTreeMap<String, String>) -> Result<String, CdbError> {
    let mut out = String::new();
    // String ordering is bytewise, so map order is already the output order
    for (k, v) in entries {
        check_key(k)?;
        check_value(v)?;
        out.push_str(k);
        out.push(':');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}

/// Reads a CDB list file. Blank lines are ignored; a line splits at its first `:`.
pub fn parse_cdb(text: &str) -> Result<BTreeMap<String, String>, CdbError> {
    let mut out = BTreeMap::new();
    let body = match text.strip_suffix('\n') {
        Some(b) => b,
        None if text.is_empty() => return Ok(out),
        None => return Err(CdbError::Syntax { line: text.lines().count(), reason: "missing final newline".into() }),
    };
    for (i, line) in body.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| CdbError::Syntax { line: i + 1, reason: "no `:`".into() })?;
        check_key(k).map_err(|_| CdbError::Syntax { line: i + 1, reason: "empty key".into() })?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CdbError::Syntax { line: i + 1, reason: format!("duplicate key {k}") });
        }
    }
    Ok(out)
}
