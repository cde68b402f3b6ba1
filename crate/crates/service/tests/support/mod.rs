#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Instant;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sentinel_core::domain::{parse_signature, IocRecord, Signature, SignatureType, SourceId, TimeWindow};
use sentinel_core::executor::{MockSiem, SiemConnector};
use sentinel_core::store::{IocStore, QueryResult, StoreFilter, StoreStats, DEFAULT_LIMIT};
use sentinel_service::config::{LlmKind, Settings};
use sentinel_service::App;
use serde_json::Value;

pub const TOKEN: &str = "test-token";
pub const BIN: &str = env!("CARGO_BIN_EXE_sentinel");

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
}

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

const PORTS: [u16; 6] = [22, 23, 80, 443, 8080, 9000];
const LABELS: [&str; 4] = ["mozi", "emotet", "phishing", "scanner"];

fn random_ip(rng: &mut StdRng) -> String {
    Ipv4Addr::new(10, rng.random_range(0..2), rng.random_range(0..4), rng.random_range(0..16)).to_string()
}

fn random_raw(rng: &mut StdRng, kind: SignatureType) -> String {
    match kind {
        SignatureType::Ip => random_ip(rng),
        SignatureType::Subnet => {
            if rng.random_bool(0.5) {
                format!("10.{}.{}.0/24", rng.random_range(0..2), rng.random_range(0..4))
            } else {
                format!("10.{}.0.0/16", rng.random_range(0..2))
            }
        }
        SignatureType::Email => format!("user{}@mail{}.example", rng.random_range(0..20), rng.random_range(0..3)),
        SignatureType::Hash => format!("{:064x}", rng.random_range(0u64..200)),
        SignatureType::Url => format!("http://host{}.example/p{}", rng.random_range(0..15), rng.random_range(0..3)),
        SignatureType::Port => PORTS[rng.random_range(0..PORTS.len())].to_string(),
    }
}

pub fn random_time(rng: &mut StdRng) -> DateTime<Utc> {
    t0() - Duration::seconds(rng.random_range(-86_400..14 * 86_400))
}

pub fn random_record(rng: &mut StdRng) -> IocRecord {
    let kind = SignatureType::ALL[rng.random_range(0..SignatureType::ALL.len())];
    let signature = parse_signature(&random_raw(rng, kind), Some(kind)).unwrap();
    let source = SourceId::ALL[rng.random_range(0..SourceId::ALL.len())];
    let a = random_time(rng);
    let b = random_time(rng);
    let ports = rng.random_bool(0.4).then(|| (0..rng.random_range(1..3)).map(|_| PORTS[rng.random_range(0..PORTS.len())]).collect());
    let label = LABELS[rng.random_range(0..LABELS.len())];
    IocRecord::new(source, signature, a.min(b), a.max(b), label, ports, format!("raw-{}", rng.random::<u32>())).unwrap()
}

pub fn random_store(seed: u64, n: usize) -> (IocStore, Vec<IocRecord>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let store = IocStore::in_memory();
    // repeated (source, signature) pairs merge, so keep drawing until n distinct records exist
    while store.len() < n {
        store.upsert_records(vec![random_record(&mut rng)]).unwrap();
    }
    let all = store.all_records();
    (store, all)
}

pub fn random_window(rng: &mut StdRng) -> TimeWindow {
    let a = random_time(rng);
    let b = random_time(rng);
    let (lo, hi) = (a.min(b), a.max(b));
    match rng.random_range(0..4) {
        0 => TimeWindow::UNBOUNDED,
        1 => TimeWindow::new(Some(lo), None).unwrap(),
        2 => TimeWindow::new(None, Some(hi)).unwrap(),
        _ => TimeWindow::between(lo, hi).unwrap(),
    }
}

/// A valid filter; signatures are drawn from `existing` half the time so matches are common.
pub fn random_filter(rng: &mut StdRng, existing: &[IocRecord]) -> StoreFilter {
    let signature = match rng.random_range(0..4) {
        0 | 1 if !existing.is_empty() => Some(existing[rng.random_range(0..existing.len())].signature.clone()),
        2 => {
            let kind = SignatureType::ALL[rng.random_range(0..SignatureType::ALL.len())];
            Some(parse_signature(&random_raw(rng, kind), Some(kind)).unwrap())
        }
        _ => None,
    };
    let index_type = match &signature {
        Some(sig) if rng.random_bool(0.5) => {
            if sig.kind == SignatureType::Subnet && rng.random_bool(0.5) {
                Some(SignatureType::Ip)
            } else {
                Some(sig.kind)
            }
        }
        Some(_) => None,
        None if rng.random_bool(0.7) => Some(SignatureType::ALL[rng.random_range(0..SignatureType::ALL.len())]),
        None => None,
    };
    let sources = rng.random_bool(0.3).then(|| {
        let mut s: Vec<SourceId> = SourceId::ALL.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if s.is_empty() {
            s.push(SourceId::AbuseUrl);
        }
        s
    });
    let limit = rng.random_bool(0.5).then(|| NonZeroUsize::new(rng.random_range(1..60)).unwrap());
    StoreFilter { index_type, signature, window: random_window(rng), sources, limit }
}

fn ipv4(v: &str) -> Option<u32> {
    v.parse::<IpAddr>().ok().and_then(|ip| match ip {
        IpAddr::V4(a) => Some(u32::from(a)),
        IpAddr::V6(_) => None,
    })
}

fn in_block(ip: &str, block: &str) -> bool {
    let Some((net, bits)) = block.split_once('/') else { return false };
    let (Some(ip), Some(net), Ok(bits)) = (ipv4(ip), ipv4(net), bits.parse::<u32>()) else { return false };
    let mask = if bits == 0 { 0 } else { u32::MAX << (32 - bits) };
    ip & mask == net & mask
}

/// Linear-scan reading of the filter semantics, written without the store's code.
pub fn oracle_matches(f: &StoreFilter, r: &IocRecord) -> bool {
    let sig_ok = match (&f.signature, f.index_type) {
        (None, None) => true,
        (None, Some(SignatureType::Port)) => r.ports.as_ref().is_some_and(|p| !p.is_empty()),
        (None, Some(k)) => r.signature.kind == k,
        (Some(s), _) if s.kind == SignatureType::Port => {
            let p: u16 = s.value.parse().unwrap();
            r.ports.as_ref().is_some_and(|ps| ps.contains(&p))
        }
        (Some(s), it) if s.kind == SignatureType::Subnet => match r.signature.kind {
            SignatureType::Ip => in_block(&r.signature.value, &s.value),
            SignatureType::Subnet => it != Some(SignatureType::Ip) && r.signature.value == s.value,
            _ => false,
        },
        (Some(s), _) => r.signature.kind == s.kind && r.signature.value == s.value,
    };
    let after = f.window.from_date.is_none_or(|from| r.last_reported >= from);
    let before = f.window.to_date.is_none_or(|to| r.last_reported <= to);
    let source_ok = f.sources.as_ref().is_none_or(|s| s.contains(&r.source));
    sig_ok && after && before && source_ok
}

pub fn oracle_query(f: &StoreFilter, all: &[IocRecord]) -> QueryResult {
    let mut hits: Vec<IocRecord> = all.iter().filter(|r| oracle_matches(f, r)).cloned().collect();
    hits.sort_by(|a, b| b.last_reported.cmp(&a.last_reported).then(a.id.cmp(&b.id)));
    let total = hits.len();
    let limit = f.limit.map_or(DEFAULT_LIMIT, |n| n.get());
    hits.truncate(limit);
    QueryResult { truncated: total > hits.len(), total_matched: total, records: hits }
}

pub fn oracle_stats(w: &TimeWindow, all: &[IocRecord]) -> StoreStats {
    let mut by_kind: BTreeMap<SignatureType, usize> = SignatureType::ALL.iter().map(|k| (*k, 0)).collect();
    let mut by_source: BTreeMap<SourceId, usize> = SourceId::ALL.iter().map(|s| (*s, 0)).collect();
    let mut total = 0;
    for r in all {
        if w.from_date.is_none_or(|f| r.last_reported >= f) && w.to_date.is_none_or(|t| r.last_reported <= t) {
            *by_kind.get_mut(&r.signature.kind).unwrap() += 1;
            *by_source.get_mut(&r.source).unwrap() += 1;
            total += 1;
        }
    }
    StoreStats { window: *w, counts_by_kind: by_kind, counts_by_source: by_source, total }
}

/// URL query string expressing `f` through the API's parameters.
pub fn filter_query(f: &StoreFilter) -> Vec<(String, String)> {
    let mut q = Vec::new();
    if let Some(t) = f.index_type {
        q.push(("type".into(), t.as_str().into()));
    }
    match &f.signature {
        Some(Signature { kind: SignatureType::Port, value }) => q.push(("port".into(), value.clone())),
        Some(s) => q.push(("value".into(), s.value.clone())),
        None => {}
    }
    let fmt = |t: DateTime<Utc>| t.format("%Y-%m-%dT%H:%M:%SZ").to_string();
    if let Some(from) = f.window.from_date {
        q.push(("from".into(), fmt(from)));
    }
    if let Some(to) = f.window.to_date {
        q.push(("to".into(), fmt(to)));
    }
    if let Some(s) = &f.sources {
        q.push(("source".into(), s.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")));
    }
    if let Some(l) = f.limit {
        q.push(("limit".into(), l.to_string()));
    }
    q
}

pub fn test_settings(data_dir: PathBuf) -> Settings {
    let mut s = Settings { data_dir, ..Settings::default() };
    s.llm.backend = LlmKind::Rules;
    s.feeds.fixtures_dir = core_fixtures().join("feeds");
    s.feeds.poll_interval_secs = 0;
    s.clock.fixed = Some("2023-01-02T00:00:00Z".into());
    s
}

pub struct Server {
    pub base: String,
    pub app_store: Arc<IocStore>,
    pub siem: Arc<MockSiem>,
    pub client: reqwest::Client,
    pub settings: Settings,
    handle: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn start(settings: Settings, store: Arc<IocStore>) -> Server {
        let siem = Arc::new(MockSiem::new());
        let app = App::with_store(settings.clone(), store.clone(), Some(siem.clone() as Arc<dyn SiemConnector>)).unwrap();
        let state = sentinel_service::api_state(&app, Some(Arc::from(TOKEN)));
        let router = sentinel_service::api::router(state, 64 * 1024);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let handle = tokio::spawn(async move {
            axum::serve(listener, router).await.unwrap();
        });
        Server { base, app_store: store, siem, client: reqwest::Client::new(), settings, handle }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).bearer_auth(TOKEN).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    pub async fn get_text(&self, path: &str, query: &[(String, String)]) -> (u16, String) {
        let resp = self.client.get(format!("{}{path}", self.base)).query(query).bearer_auth(TOKEN).send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = self.client.post(format!("{}{path}", self.base)).bearer_auth(TOKEN).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    pub async fn session(&self) -> String {
        let (status, body) = self.post("/api/sessions", Value::Null).await;
        assert_eq!(status, 201, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    pub async fn say(&self, id: &str, text: &str) -> (u16, Value) {
        self.post(&format!("/api/sessions/{id}/messages"), serde_json::json!({"text": text})).await
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn write_config(dir: &Path, port: u16) -> PathBuf {
    let text = format!(
        r#"listen = "127.0.0.1:{port}"
data_dir = "data"

[llm]
backend = "rules"

[feeds]
fixtures_dir = "{feeds}"
poll_interval_secs = 0

[clock]
fixed = "2023-01-02T00:00:00Z"
"#,
        feeds = core_fixtures().join("feeds").display()
    );
    let path = dir.join("sentinel.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub struct Service {
    child: Child,
    pub base: String,
    pub client: reqwest::blocking::Client,
}

impl Service {
    pub fn start(config: &Path, port: u16) -> Service {
        let child = Command::new(BIN)
            .args(["serve", "--config"])
            .arg(config)
            .env("SENTINEL_API_TOKEN", TOKEN)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let s = Service { child, base: format!("http://127.0.0.1:{port}"), client: reqwest::blocking::Client::new() };
        let deadline = Instant::now() + std::time::Duration::from_secs(20);
        while Instant::now() < deadline {
            if s.client.get(format!("{}/healthz", s.base)).send().is_ok_and(|r| r.status().is_success()) {
                return s;
            }
            std::thread::sleep(std::time::Duration::from_millis(50));
        }
        panic!("service did not come up");
    }

    pub fn get(&self, path: &str) -> String {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(TOKEN).send().unwrap().text().unwrap()
    }

    pub fn post(&self, path: &str, body: Value) -> Value {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(TOKEN).json(&body).send().unwrap().json().unwrap()
    }

    pub fn kill(mut self) {
        // SIGKILL: no destructors, no flushing
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
