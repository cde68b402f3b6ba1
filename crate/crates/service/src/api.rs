//! HTTP and WebSocket surface.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sentinel_core::dialogue::Decision;
use sentinel_core::domain::{to_canonical_string, SourceId};
use sentinel_core::feeds::FeedSyncer;
use sentinel_core::store::IocStore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::query::QueryParams;
use crate::sessions::SessionManager;

#[derive(Clone)]
pub struct ApiState {
    pub sessions: Arc<SessionManager>,
    pub store: Arc<IocStore>,
    pub syncer: Arc<FeedSyncer>,
    /// `None` disables authentication.
    pub token: Option<Arc<str>>,
}

pub fn canonical_response<T: Serialize + ?Sized>(status: StatusCode, body: &T) -> Response {
    match to_canonical_string(body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn ok<T: Serialize>(body: &T) -> Response {
    canonical_response(StatusCode::OK, body)
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

#[derive(Deserialize)]
struct ConfirmBody {
    decision: Decision,
}

#[derive(Deserialize)]
struct StreamParams {
    access_token: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditParams {
    session: Option<String>,
    after: Option<u64>,
}

/// Request bodies are capped at `body_limit` bytes.
pub fn router(state: ApiState, body_limit: usize) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/confirm", post(confirm))
        .route("/sessions/{id}/stream", get(stream))
        .route("/iocs", get(iocs))
        .route("/feeds/{id}/sync", post(sync_feed))
        .route("/audit", get(audit))
        .route_layer(middleware::from_fn_with_state(state.clone(), authorize));
    Router::new()
        .route("/healthz", get(healthz))
        .nest("/api", api)
        .fallback(|| async { ServiceError::NotFound })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn authorize(State(state): State<ApiState>, Query(q): Query<StreamParams>, req: Request, next: Next) -> Response {
    let Some(expected) = &state.token else { return next.run(req).await };
    // browsers cannot set headers on a WebSocket handshake, so the stream also takes a query token
    let given = bearer(req.headers()).map(str::to_string).or(q.access_token);
    match given {
        Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => next.run(req).await,
        _ => ServiceError::Unauthorized.into_response(),
    }
}

async fn healthz() -> Response {
    ok(&json!({"status": "ok", "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")}))
}

async fn create_session(State(s): State<ApiState>) -> Result<Response, ServiceError> {
    let record = s.sessions.create()?;
    Ok(canonical_response(StatusCode::CREATED, &json!({"session_id": record.session_id, "state": record.state})))
}

async fn get_session(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(&s.sessions.get(&id).await?))
}

async fn post_message(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    body: Result<Json<MessageBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(ok(&s.sessions.post_message(&id, &body.text).await?))
}

async fn confirm(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    body: Result<Json<ConfirmBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(ok(&s.sessions.confirm(&id, body.decision).await?))
}

async fn stream(State(s): State<ApiState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    let rx = s.sessions.subscribe(&id)?;
    Ok(ws.on_upgrade(move |socket| forward(socket, rx)))
}

async fn forward(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<crate::sessions::StreamEvent>) {
    loop {
        tokio::select! {
            ev = rx.recv() => {
                let text = match ev {
                    Ok(ev) => to_canonical_string(&ev),
                    Err(RecvError::Lagged(n)) => to_canonical_string(&json!({"type": "lagged", "missed": n})),
                    Err(RecvError::Closed) => break,
                };
                let Ok(text) = text else { break };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn iocs(
    State(s): State<ApiState>,
    params: Result<Query<QueryParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(params) = params.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let filter = params.to_filter(s.sessions.engine().now()).map_err(ServiceError::BadRequest)?;
    let result = s.store.query(&filter).map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(ok(&result))
}

async fn sync_feed(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let ids: Vec<SourceId> = if id == "all" {
        SourceId::ALL.to_vec()
    } else {
        vec![id.parse().map_err(|e: sentinel_core::domain::DomainError| ServiceError::BadRequest(e.to_string()))?]
    };
    let mut out = Vec::new();
    for id in ids {
        let entry = match s.syncer.sync(id, &s.store).await {
            Ok(Some(report)) => json!({"source": id, "status": "synced", "report": report}),
            Ok(None) => json!({"source": id, "status": "skipped"}),
            Err(e) => json!({"source": id, "status": "failed", "error": e.to_string()}),
        };
        out.push(entry);
    }
    Ok(ok(&json!({"results": out})))
}

async fn audit(
    State(s): State<ApiState>,
    params: Result<Query<AuditParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(params) = params.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let mut entries = s.sessions.audit().entries(params.session.as_deref()).map_err(|e| ServiceError::Internal(e.to_string()))?;
    if let Some(after) = params.after {
        entries.retain(|e| e.seq > after);
    }
    Ok(ok(&json!({"entries": entries})))
}
