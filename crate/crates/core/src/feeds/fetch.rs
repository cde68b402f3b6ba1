use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde_json::Value;

use crate::domain::canonical::timestamp;
use crate::domain::SourceId;

use super::normalize::collect_entries;
use super::{FeedError, FeedMapping, FeedSource, HttpMethod};

/// Exponential backoff between attempts, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Where payloads come from.
#[derive(Debug, Clone)]
pub enum FeedFetcher {
    /// Replays `<dir>/<source-id>/<scenario>.json`.
    Fixture { dir: PathBuf, scenario: String },
    Live { client: reqwest::Client, retry: RetryPolicy },
}

impl FeedFetcher {
    pub fn fixtures(dir: impl Into<PathBuf>, scenario: impl Into<String>) -> FeedFetcher {
        FeedFetcher::Fixture { dir: dir.into(), scenario: scenario.into() }
    }

    pub fn live(timeout: Duration, retry: RetryPolicy) -> Result<FeedFetcher, FeedError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("sentinel/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FeedError::Mapping(e.to_string()))?;
        Ok(FeedFetcher::Live { client, retry })
    }

    /// Raw response body. Without `since`, fixture mode returns the file unchanged.
    pub async fn fetch(&self, source: &FeedSource, since: Option<DateTime<Utc>>) -> Result<String, FeedError> {
        match self {
            FeedFetcher::Fixture { dir, scenario } => {
                let path = dir.join(source.id.as_str()).join(format!("{scenario}.json"));
                let body = tokio::fs::read_to_string(&path).await.map_err(|e| FeedError::FeedUnavailable {
                    feed: source.id,
                    reason: format!("{}: {e}", path.display()),
                })?;
                match since {
                    None => Ok(body),
                    Some(since) => filter_since(source, &body, since),
                }
            }
            FeedFetcher::Live { client, retry } => fetch_live(client, *retry, source, since).await,
        }
    }
}

/// Drops entries not reported strictly after `since`, then re-serializes.
fn filter_since(source: &FeedSource, body: &str, since: DateTime<Utc>) -> Result<String, FeedError> {
    let malformed = |reason: String| FeedError::MalformedPayload { feed: source.id, reason };
    let mut root: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    // validate the path first so the mutable walk below cannot fail halfway
    collect_entries(&root, &source.mapping.entries).map_err(malformed)?;
    retain(&mut root, &source.mapping.entries, &mut Vec::new(), &source.mapping, since);
    serde_json::to_string(&root).map_err(|e| malformed(e.to_string()))
}

fn retain(node: &mut Value, path: &[String], parents: &mut Vec<Value>, m: &FeedMapping, since: DateTime<Utc>) {
    let Some((key, rest)) = path.split_first() else { return };
    let snapshot = node.clone();
    let Some(child) = node.get_mut(key) else { return };
    parents.push(snapshot);
    match child {
        Value::Array(items) if rest.is_empty() => {
            items.retain(|e| reported_at(e, parents, m).is_some_and(|t| t > since));
        }
        Value::Array(items) => {
            for item in items.iter_mut() {
                retain(item, rest, parents, m, since);
            }
        }
        Value::Object(_) if rest.is_empty() => {
            let fresh = reported_at(child, parents, m).is_some_and(|t| t > since);
            if !fresh {
                *child = Value::Null;
            }
        }
        other @ Value::Object(_) => retain(other, rest, parents, m, since),
        _ => {}
    }
    parents.pop();
}

fn reported_at(entry: &Value, parents: &[Value], m: &FeedMapping) -> Option<DateTime<Utc>> {
    let lookup = |spec: &String| -> Option<DateTime<Utc>> {
        let mut target = entry;
        let mut rest = spec.as_str();
        let mut depth = 0;
        while let Some(r) = rest.strip_prefix("../") {
            depth += 1;
            rest = r;
        }
        if depth > 0 {
            target = parents.iter().rev().nth(depth - 1)?;
        }
        target.get(rest)?.as_str().and_then(timestamp::parse_lenient)
    };
    let first = m.first_seen.iter().find_map(lookup);
    let last = m.last_seen.iter().find_map(lookup);
    first.into_iter().chain(last).max()
}

async fn fetch_live(
    client: &reqwest::Client,
    retry: RetryPolicy,
    source: &FeedSource,
    since: Option<DateTime<Utc>>,
) -> Result<String, FeedError> {
    let m = &source.mapping;
    let key = std::env::var(source.auth_env()).ok().filter(|k| !k.is_empty());
    let mut last_error = String::from("no attempt made");
    for attempt in 1..=retry.attempts.max(1) {
        if attempt > 1 {
            tokio::time::sleep(retry.delay_before(attempt - 1)).await;
        }
        let mut req = match m.method {
            HttpMethod::Get => client.get(&m.endpoint),
            HttpMethod::Post => client.post(&m.endpoint).form(&m.form),
        };
        if let (Some(param), Some(since)) = (&m.since_param, since) {
            req = req.query(&[(param.as_str(), timestamp::format(&since))]);
        }
        if let (Some(header), Some(key)) = (&m.auth_header, &key) {
            req = req.header(header.as_str(), format!("{}{}", m.auth_prefix, key));
        }
        match req.send().await {
            Ok(resp) => {
                let status = resp.status();
                if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
                    return Err(FeedError::AuthRejected(source.id));
                }
                if status.is_success() {
                    return resp.text().await.map_err(|e| unavailable(source.id, e.to_string()));
                }
                last_error = format!("HTTP {status}");
                let retriable = status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS;
                if !retriable {
                    break;
                }
            }
            Err(e) => last_error = e.to_string(),
        }
        tracing::warn!(source = %source.id, attempt, error = %last_error, "feed fetch failed");
    }
    Err(unavailable(source.id, last_error))
}

fn unavailable(source: SourceId, reason: String) -> FeedError {
    FeedError::FeedUnavailable { feed: source, reason }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeds::{normalize, FeedCatalog};
    use chrono::TimeZone;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before(1), Duration::from_secs(1));
        assert_eq!(p.delay_before(2), Duration::from_secs(2));
        assert_eq!(p.delay_before(10), Duration::from_secs(30));
    }

    #[test]
    fn since_filter_keeps_only_later_entries() {
        let source = FeedCatalog::default().get(SourceId::AlienvaultOtx).clone();
        let body = r#"{"results":[{"name":"p","modified":"2023-01-01T00:00:00","indicators":[
            {"indicator":"1.1.1.1","type":"IPv4","created":"2023-01-01T10:00:00"},
            {"indicator":"2.2.2.2","type":"IPv4","created":"2022-12-01T10:00:00"}]}]}"#;
        let since = Utc.with_ymd_and_hms(2023, 1, 1, 5, 0, 0).unwrap();
        let filtered = filter_since(&source, body, since).unwrap();
        let n = normalize(&source, &filtered).unwrap();
        assert_eq!(n.records.len(), 1);
        assert_eq!(n.records[0].signature.value, "1.1.1.1");
    }

    #[tokio::test]
    async fn missing_fixture_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeedFetcher::fixtures(dir.path(), "default");
        let source = FeedCatalog::default().get(SourceId::Anomali).clone();
        assert!(matches!(f.fetch(&source, None).await, Err(FeedError::FeedUnavailable { .. })));
    }
}
