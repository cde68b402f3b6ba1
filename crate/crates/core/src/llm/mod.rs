//! Chat-completion gateway: one request type, interchangeable backends,
//! prompt templates, label parsing and self-consistency voting.

mod label;
mod remote;
mod rules;
mod scripted;
mod template;
mod vote;

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{canonical_value, ChatMessage, Role};

pub use label::{parse_label, LabeledResponse};
pub use remote::{RemoteBackend, RemoteConfig};
pub use rules::RuleBasedBackend;
pub use scripted::{AuthoredBackend, AuthoredEntry, AuthoredScript, FixtureEntry, ScriptSession, QueueBackend, RecordingBackend, ScriptedBackend};
pub use template::{PromptId, PromptTemplate, TemplateError, Templates};
pub use vote::vote;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("language model timed out")]
    BackendTimeout,
    #[error("rate limited, retry after {}s", retry_after.as_secs())]
    RateLimited { retry_after: Duration },
    #[error("no scripted completion for request {digest}")]
    FixtureMiss { digest: String },
    #[error("language model unavailable: {0}")]
    Unavailable(String),
    #[error("unexpected completion response: {0}")]
    BadResponse(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("completion carries no intent label")]
    UnlabeledResponse,
}

impl LlmError {
    /// Failures worth retrying later with the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::BackendTimeout | LlmError::RateLimited { .. } | LlmError::Unavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub sample_count: u32,
    pub max_output: u32,
    /// Which prompt produced the request. Not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<PromptId>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>, temperature: f64, sample_count: u32, max_output: u32) -> CompletionRequest {
        CompletionRequest { messages, temperature, sample_count, max_output, purpose: None }
    }

    pub fn for_prompt(mut self, id: PromptId) -> CompletionRequest {
        self.purpose = Some(id);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidRequest(m.into()));
        match self.messages.first() {
            None => return bad("no messages"),
            Some(m) if m.role != Role::System => return bad("first message must be the system prompt"),
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature outside [0, 2]");
        }
        if self.sample_count == 0 {
            return bad("sample_count must be at least 1");
        }
        if self.max_output == 0 {
            return bad("max_output must be positive");
        }
        Ok(())
    }

    /// Canonical form used for digests: roles and contents only, timestamps dropped.
    pub fn canonical(&self) -> String {
        let messages: Vec<_> = self.messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect();
        canonical_value(&json!({
            "messages": messages,
            "temperature": self.temperature,
            "sample_count": self.sample_count,
            "max_output": self.max_output,
        }))
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Content of the last user message, if any.
    pub fn last_user(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str())
    }

    pub fn system(&self) -> &str {
        self.messages.first().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Returns exactly `request.sample_count` completions.
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError>;

    fn name(&self) -> &'static str;
}

/// Validates the request and checks the backend kept the sample-count contract.
pub async fn complete(backend: &dyn ChatBackend, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
    request.validate()?;
    let out = backend.complete(request).await?;
    if out.len() != request.sample_count as usize {
        return Err(LlmError::BadResponse(format!(
            "{} returned {} completions for sample_count {}",
            backend.name(),
            out.len(),
            request.sample_count
        )));
    }
    Ok(out)
}

/// Tries `primary`, and on a transient failure answers from `fallback`.
pub struct FallbackBackend<P, F> {
    pub primary: P,
    pub fallback: F,
}

#[async_trait]
impl<P: ChatBackend, F: ChatBackend> ChatBackend for FallbackBackend<P, F> {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        match self.primary.complete(request).await {
            Err(e) if e.is_transient() => {
                tracing::warn!(error = %e, fallback = self.fallback.name(), "primary model failed, degrading");
                self.fallback.complete(request).await
            }
            other => other,
        }
    }

    fn name(&self) -> &'static str {
        "fallback"
    }
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request).await
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
