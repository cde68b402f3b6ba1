use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use sentinel_core::dialogue::EngineError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("a turn is already running and the queue is full")]
    Busy,
    #[error("no plan is waiting for confirmation")]
    NothingPending,
    #[error("{0}")]
    BadRequest(String),
    #[error("no such endpoint")]
    NotFound,
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("model backend failed: {0}")]
    Upstream(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::Busy => "Busy",
            ServiceError::NothingPending => "NothingPending",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::NotFound => "NotFound",
            ServiceError::Unauthorized => "Unauthorized",
            ServiceError::Upstream(_) => "Upstream",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Busy => StatusCode::TOO_MANY_REQUESTS,
            ServiceError::NothingPending => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound => StatusCode::NOT_FOUND,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Upstream(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::NothingPending => ServiceError::NothingPending,
            EngineError::EmptyMessage => ServiceError::BadRequest(e.to_string()),
            EngineError::Llm(e) => ServiceError::Upstream(e.to_string()),
            EngineError::Template(e) => ServiceError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if matches!(self, ServiceError::Internal(_)) {
            tracing::error!(error = %self, "request failed");
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        crate::api::canonical_response(self.status(), &body)
    }
}
