use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{TimeZone, Utc};
use parking_lot::Mutex;
use sentinel_core::domain::{ChatMessage, Role};
use sentinel_core::executor::{AgentScope, SiemCommand, SiemConnector, SiemError, WazuhConfig, WazuhConnector};
use sentinel_core::llm::{complete, ChatBackend, CompletionRequest, LlmError, RemoteBackend, RemoteConfig};
use serde_json::{json, Value};

async fn spawn(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[derive(Default)]
struct Manager {
    logins: usize,
    valid_token: Option<String>,
    lists: BTreeMap<String, String>,
    responses: Vec<(Value, Option<String>)>,
    reject_next_token: bool,
}

type Shared = Arc<Mutex<Manager>>;

fn authorized(m: &mut Manager, headers: &HeaderMap) -> bool {
    let bearer = headers.get("authorization").and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    if m.reject_next_token {
        m.reject_next_token = false;
        return false;
    }
    bearer.is_some() && bearer.map(str::to_string) == m.valid_token
}

async fn login(State(s): State<Shared>, headers: HeaderMap) -> Response {
    if headers.get("authorization").and_then(|v| v.to_str().ok()).is_none_or(|v| !v.starts_with("Basic ")) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    let mut m = s.lock();
    m.logins += 1;
    let token = format!("jwt-{}", m.logins);
    m.valid_token = Some(token.clone());
    Json(json!({"data": {"token": token}, "error": 0})).into_response()
}

async fn read_list(State(s): State<Shared>, Path(name): Path<String>, headers: HeaderMap) -> Response {
    let mut m = s.lock();
    if !authorized(&mut m, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    match m.lists.get(&name) {
        Some(text) => text.clone().into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn write_list(State(s): State<Shared>, Path(name): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let mut m = s.lock();
    if !authorized(&mut m, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    m.lists.insert(name, String::from_utf8(body.to_vec()).unwrap());
    Json(json!({"error": 0})).into_response()
}

async fn active_response(State(s): State<Shared>, Query(q): Query<BTreeMap<String, String>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let mut m = s.lock();
    if !authorized(&mut m, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    m.responses.push((body, q.get("agents_list").cloned()));
    Json(json!({"error": 0})).into_response()
}

async fn manager() -> (Shared, WazuhConnector) {
    let state: Shared = Arc::default();
    let app = Router::new()
        .route("/security/user/authenticate", post(login))
        .route("/lists/files/{name}", get(read_list).put(write_list))
        .route("/active-response", put(active_response))
        .with_state(state.clone());
    let base_url = spawn(app).await;
    let connector = WazuhConnector::new(WazuhConfig { base_url, ..WazuhConfig::default() }, "secret".into()).unwrap();
    (state, connector)
}

fn add(key: &str) -> SiemCommand {
    SiemCommand::CdbAdd { list: "sentinel-blacklist".into(), key: key.into(), value: "sentinel".into() }
}

#[tokio::test]
async fn wazuh_list_updates_and_active_responses() {
    let (state, wazuh) = manager().await;
    wazuh
        .apply(&[add("130.231.4.98"), SiemCommand::ActiveResponseBlock { target: "130.231.4.98".into(), scope: AgentScope::All }])
        .await
        .unwrap();
    wazuh
        .apply(&[add("1.2.3.4"), SiemCommand::ActiveResponseBlock { target: "1.2.3.4".into(), scope: AgentScope::Agents(vec!["001".into(), "002".into()]) }])
        .await
        .unwrap();
    {
        let m = state.lock();
        assert_eq!(m.lists["sentinel-blacklist"], "1.2.3.4:sentinel\n130.231.4.98:sentinel\n");
        assert_eq!(m.logins, 1);
        assert_eq!(m.responses.len(), 2);
        assert_eq!(m.responses[0].0, json!({"command": "firewall-drop", "arguments": [], "alert": {"data": {"srcip": "130.231.4.98"}}}));
        assert_eq!(m.responses[0].1, None);
        assert_eq!(m.responses[1].1.as_deref(), Some("001,002"));
    }
    wazuh
        .apply(&[
            SiemCommand::CdbRemove { list: "sentinel-blacklist".into(), key: "1.2.3.4".into() },
            SiemCommand::ActiveResponseUnblock { target: "1.2.3.4".into(), scope: AgentScope::All },
        ])
        .await
        .unwrap();
    let m = state.lock();
    assert_eq!(m.lists["sentinel-blacklist"], "130.231.4.98:sentinel\n");
    assert_eq!(m.responses[2].0["command"], "!sentinel-unblock.sh");
}

#[tokio::test]
async fn wazuh_reauthenticates_once_on_expired_token() {
    let (state, wazuh) = manager().await;
    wazuh.apply(&[add("10.0.0.1")]).await.unwrap();
    state.lock().reject_next_token = true;
    wazuh.apply(&[add("10.0.0.2")]).await.unwrap();
    let m = state.lock();
    assert_eq!(m.logins, 2);
    assert_eq!(m.lists["sentinel-blacklist"], "10.0.0.1:sentinel\n10.0.0.2:sentinel\n");
}

#[tokio::test]
async fn wazuh_refuses_bad_commands_before_any_request() {
    let (state, wazuh) = manager().await;
    assert!(wazuh.apply(&[add("fe80::1")]).await.is_err());
    assert_eq!(state.lock().logins, 0);
    let down = WazuhConnector::new(WazuhConfig { base_url: "http://127.0.0.1:1".into(), timeout_secs: 2, ..WazuhConfig::default() }, String::new()).unwrap();
    assert!(matches!(down.apply(&[add("10.0.0.1")]).await, Err(SiemError::Unavailable(_))));
}

#[derive(Default)]
struct Llm {
    calls: usize,
    limited: usize,
    bodies: Vec<Value>,
}

async fn chat(State(s): State<Arc<Mutex<Llm>>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let mut m = s.lock();
    m.calls += 1;
    m.bodies.push(body.clone());
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer k") {
        return (StatusCode::UNAUTHORIZED, "bad key").into_response();
    }
    if m.limited > 0 {
        m.limited -= 1;
        return (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")], "slow down").into_response();
    }
    let n = body["n"].as_u64().unwrap();
    // answer out of order to check the client sorts by index
    let choices: Vec<Value> = (0..n).rev().map(|i| json!({"index": i, "message": {"role": "assistant", "content": format!("answer {i}")}})).collect();
    Json(json!({"choices": choices})).into_response()
}

fn request(samples: u32) -> CompletionRequest {
    let t = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
    CompletionRequest::new(
        vec![ChatMessage::new(Role::System, "sys", t).unwrap(), ChatMessage::new(Role::User, "hi", t).unwrap()],
        0.7,
        samples,
        64,
    )
}

async fn llm(limited: usize) -> (Arc<Mutex<Llm>>, String) {
    let state = Arc::new(Mutex::new(Llm { limited, ..Llm::default() }));
    let url = spawn(Router::new().route("/v1/chat/completions", post(chat)).with_state(state.clone())).await;
    (state, format!("{url}/v1/chat/completions"))
}

#[tokio::test]
async fn remote_backend_wire_format_and_rate_limits() {
    let (state, endpoint) = llm(1).await;
    let config = RemoteConfig { endpoint, model: "test-model".into(), max_retry_wait: Duration::from_secs(1), ..RemoteConfig::default() };
    let backend = RemoteBackend::with_key(config.clone(), Some("k".into())).unwrap();
    let out = complete(&backend, &request(3)).await.unwrap();
    assert_eq!(out, vec!["answer 0", "answer 1", "answer 2"]);
    {
        let m = state.lock();
        assert_eq!(m.calls, 2);
        assert_eq!(
            m.bodies[1],
            json!({"model": "test-model", "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}], "temperature": 0.7, "n": 3, "max_tokens": 64})
        );
    }
    let (_, endpoint) = llm(10).await;
    let limited = RemoteBackend::with_key(RemoteConfig { endpoint, rate_limit_retries: 1, ..config.clone() }, Some("k".into())).unwrap();
    let err = limited.complete(&request(1)).await.unwrap_err();
    assert!(matches!(err, LlmError::RateLimited { .. }) && err.is_transient());
    let (_, endpoint) = llm(0).await;
    let wrong_key = RemoteBackend::with_key(RemoteConfig { endpoint, ..config }, Some("nope".into())).unwrap();
    let err = wrong_key.complete(&request(1)).await.unwrap_err();
    assert!(matches!(err, LlmError::InvalidRequest(_)) && !err.is_transient());
    assert_eq!(backend.name(), "remote");
}
