use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::get;
use axum::Router;
use sentinel_core::domain::{SignatureType, SourceId};
use sentinel_core::feeds::{normalize, sync, FeedCatalog, FeedError, FeedFetcher, FeedSyncer, OverlapPolicy, RetryPolicy};
use sentinel_core::store::{IocStore, StoreFilter};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/feeds")
}

#[tokio::test]
async fn every_fixture_conserves_entries() {
    let catalog = FeedCatalog::default();
    let fetcher = FeedFetcher::fixtures(fixtures(), "default");
    for source in catalog.iter() {
        let body = fetcher.fetch(source, None).await.unwrap();
        let n = normalize(source, &body).unwrap();
        assert_eq!(n.fetched(), 12, "{}", source.id);
        assert_eq!(n.records.len(), 10, "{}: {:?}", source.id, n.rejects);
        assert_eq!(n.rejects.len(), 2, "{}", source.id);
        for r in &n.records {
            r.validate().unwrap();
            assert_eq!(r.source, source.id);
        }
    }
}

#[tokio::test]
async fn second_sync_only_updates() {
    let store = IocStore::in_memory();
    let syncer = FeedSyncer::new(FeedCatalog::default(), FeedFetcher::fixtures(fixtures(), "default"), OverlapPolicy::Queue);
    let first = syncer.sync_all(&store).await;
    let mut inserted = 0;
    for (id, res) in first {
        let r = res.unwrap().unwrap();
        assert_eq!((r.fetched, r.normalized, r.rejected), (12, 10, 2), "{id}");
        assert_eq!(r.inserted + r.updated, r.normalized);
        inserted += r.inserted;
    }
    assert_eq!(store.len(), inserted);
    let before = store.all_records();
    for (_, res) in syncer.sync_all(&store).await {
        let r = res.unwrap().unwrap();
        assert_eq!(r.inserted, 0);
        assert_eq!(r.updated, r.normalized);
    }
    assert_eq!(store.all_records(), before);
}

#[tokio::test]
async fn fixture_ports_are_indexed() {
    let store = IocStore::in_memory();
    let syncer = FeedSyncer::new(FeedCatalog::default(), FeedFetcher::fixtures(fixtures(), "default"), OverlapPolicy::Queue);
    syncer.sync_all(&store).await;
    let filter = StoreFilter {
        index_type: Some(SignatureType::Port),
        signature: Some(sentinel_core::domain::parse_signature("23", Some(SignatureType::Port)).unwrap()),
        window: Default::default(),
        sources: None,
        limit: None,
    };
    let hits = store.query(&filter).unwrap();
    assert!(hits.total_matched >= 4);
    assert!(hits.records.iter().all(|r| r.has_port(23)));
}

#[tokio::test]
async fn unavailable_feed_leaves_store_untouched() {
    let store = IocStore::in_memory();
    let catalog = FeedCatalog::default();
    let good = FeedFetcher::fixtures(fixtures(), "default");
    sync(&good, catalog.get(SourceId::Anomali), &store).await.unwrap();
    let before = store.all_records();
    let missing = FeedFetcher::fixtures(fixtures(), "no-such-scenario");
    let err = sync(&missing, catalog.get(SourceId::Anomali), &store).await.unwrap_err();
    assert!(matches!(err, FeedError::FeedUnavailable { feed: SourceId::Anomali, .. }));
    assert_eq!(store.all_records(), before);
}

#[derive(Clone)]
struct Mock {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    status: StatusCode,
}

async fn serve(mock: Mock) -> String {
    async fn handler(State(m): State<Mock>, headers: HeaderMap) -> (StatusCode, String) {
        let n = m.hits.fetch_add(1, Ordering::SeqCst);
        if n < m.fail_first {
            return (m.status, String::new());
        }
        let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).unwrap_or("");
        if auth != "apikey test-key" {
            return (StatusCode::UNAUTHORIZED, String::new());
        }
        let body = r#"{"objects":[{"value":"10.1.2.3","type":"ip","created_ts":"2023-01-01T00:00:00Z","ports":[23]}]}"#;
        (StatusCode::OK, body.to_string())
    }
    let app = Router::new().route("/intel", get(handler)).with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/intel")
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5) }
}

// Only this test touches the Anomali key variable.
#[tokio::test]
async fn live_fetch_retries_then_rejects_bad_credentials() {
    std::env::set_var(SourceId::Anomali.key_env_var(), "test-key");
    let hits = Arc::new(AtomicUsize::new(0));
    let url = serve(Mock { hits: hits.clone(), fail_first: 2, status: StatusCode::SERVICE_UNAVAILABLE }).await;
    let mut source = FeedCatalog::default().get(SourceId::Anomali).clone();
    source.mapping.endpoint = url;
    let fetcher = FeedFetcher::live(Duration::from_secs(5), fast_retry()).unwrap();
    let store = IocStore::in_memory();
    let report = sync(&fetcher, &source, &store).await.unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert_eq!(report.inserted, 1);

    let hits = Arc::new(AtomicUsize::new(0));
    let url = serve(Mock { hits: hits.clone(), fail_first: 5, status: StatusCode::BAD_GATEWAY }).await;
    source.mapping.endpoint = url;
    let err = sync(&fetcher, &source, &store).await.unwrap_err();
    assert!(matches!(err, FeedError::FeedUnavailable { .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 3);

    let url = serve(Mock { hits: Arc::new(AtomicUsize::new(0)), fail_first: 0, status: StatusCode::OK }).await;
    source.mapping.endpoint = url;
    source.mapping.auth_prefix = "token ".into();
    let err = sync(&fetcher, &source, &store).await.unwrap_err();
    assert_eq!(err, FeedError::AuthRejected(SourceId::Anomali));
    assert_eq!(store.len(), 1);
}
