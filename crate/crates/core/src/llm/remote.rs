use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{ChatBackend, CompletionRequest, LlmError};

pub const KEY_ENV: &str = "SENTINEL_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_concurrent: usize,
    /// How often a rate-limited call is retried after its retry-after delay.
    pub rate_limit_retries: u32,
    /// Retry-after delays longer than this are returned to the caller instead.
    #[serde(with = "secs")]
    pub max_retry_wait: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            timeout: Duration::from_secs(60),
            max_concurrent: 4,
            rate_limit_retries: 2,
            max_retry_wait: Duration::from_secs(30),
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Chat-completions client with a concurrency cap.
pub struct RemoteBackend {
    config: RemoteConfig,
    key: Option<String>,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl RemoteBackend {
    /// Reads the API key from `SENTINEL_LLM_KEY`.
    pub fn new(config: RemoteConfig) -> Result<RemoteBackend, LlmError> {
        let key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        RemoteBackend::with_key(config, key)
    }

    pub fn with_key(config: RemoteConfig, key: Option<String>) -> Result<RemoteBackend, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_concurrent.max(1)));
        Ok(RemoteBackend { config, key, client, permits })
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "n": request.sample_count,
            "max_tokens": request.max_output,
        })
    }

    async fn call_once(&self, body: &Value) -> Result<Vec<String>, LlmError> {
        let _permit = self.permits.acquire().await.map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                LlmError::BackendTimeout
            } else {
                LlmError::Unavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .and_then(|s| Duration::try_from_secs_f64(s).ok())
                .unwrap_or(Duration::from_secs(1));
            return Err(LlmError::RateLimited { retry_after });
        }
        if status == reqwest::StatusCode::REQUEST_TIMEOUT || status == reqwest::StatusCode::GATEWAY_TIMEOUT {
            return Err(LlmError::BackendTimeout);
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let detail = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
            return Err(if status.is_client_error() { LlmError::InvalidRequest(detail) } else { LlmError::Unavailable(detail) });
        }
        let v: Value = resp.json().await.map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let choices = v["choices"].as_array().ok_or_else(|| LlmError::BadResponse("no choices".into()))?;
        let mut indexed: Vec<(u64, String)> = Vec::with_capacity(choices.len());
        for (pos, c) in choices.iter().enumerate() {
            let text = c["message"]["content"].as_str().ok_or_else(|| LlmError::BadResponse("choice without content".into()))?;
            indexed.push((c["index"].as_u64().unwrap_or(pos as u64), text.to_string()));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(indexed.into_iter().map(|(_, t)| t).collect())
    }
}

#[async_trait]
impl ChatBackend for RemoteBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        let body = self.body(request);
        let mut retries = 0;
        loop {
            match self.call_once(&body).await {
                Err(LlmError::RateLimited { retry_after })
                    if retries < self.config.rate_limit_retries && retry_after <= self.config.max_retry_wait =>
                {
                    retries += 1;
                    tracing::info!(?retry_after, "language model rate limited, waiting");
                    tokio::time::sleep(retry_after).await;
                }
                Ok(out) if out.len() != request.sample_count as usize => {
                    return Err(LlmError::BadResponse(format!("asked for {} choices, got {}", request.sample_count, out.len())));
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}
