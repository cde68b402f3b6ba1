//! Wazuh manager API client. All endpoint paths and payload shapes live here.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cdb::{parse_cdb, render_cdb};
use super::siem::{AgentScope, SiemCommand, SiemConnector, SiemError};

pub const PASSWORD_ENV: &str = "SENTINEL_WAZUH_PASSWORD";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WazuhConfig {
    pub base_url: String,
    pub user: String,
    /// Active-response command that blocks `srcip`.
    pub block_command: String,
    /// Active-response command that lifts a block; must be provisioned on the agents.
    pub unblock_command: String,
    pub timeout_secs: u64,
    pub accept_invalid_certs: bool,
}

impl Default for WazuhConfig {
    fn default() -> Self {
        WazuhConfig {
            base_url: "https://localhost:55000".into(),
            user: "wazuh".into(),
            block_command: "firewall-drop".into(),
            unblock_command: "!sentinel-unblock.sh".into(),
            timeout_secs: 30,
            accept_invalid_certs: false,
        }
    }
}

pub struct WazuhConnector {
    config: WazuhConfig,
    password: String,
    client: reqwest::Client,
    token: parking_lot::Mutex<Option<String>>,
    // one batch at a time keeps list read-modify-write cycles race-free
    gate: tokio::sync::Mutex<()>,
}

fn unavailable(e: impl std::fmt::Display) -> SiemError {
    SiemError::Unavailable(e.to_string())
}

async fn check(resp: Response) -> Result<Response, SiemError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().await.unwrap_or_default();
    let detail = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
    if status.is_server_error() {
        Err(SiemError::Unavailable(detail))
    } else {
        Err(SiemError::Rejected(detail))
    }
}

impl WazuhConnector {
    pub fn new(config: WazuhConfig, password: String) -> Result<WazuhConnector, SiemError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .danger_accept_invalid_certs(config.accept_invalid_certs)
            .build()
            .map_err(unavailable)?;
        Ok(WazuhConnector { config, password, client, token: parking_lot::Mutex::new(None), gate: tokio::sync::Mutex::new(()) })
    }

    /// Reads the API password from `SENTINEL_WAZUH_PASSWORD`.
    pub fn from_env(config: WazuhConfig) -> Result<WazuhConnector, SiemError> {
        let password = std::env::var(PASSWORD_ENV).unwrap_or_default();
        WazuhConnector::new(config, password)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    async fn authenticate(&self) -> Result<String, SiemError> {
        let resp = self
            .client
            .post(self.url("/security/user/authenticate"))
            .basic_auth(&self.config.user, Some(&self.password))
            .send()
            .await
            .map_err(unavailable)?;
        let v: Value = check(resp).await?.json().await.map_err(unavailable)?;
        let token = v["data"]["token"].as_str().ok_or_else(|| SiemError::Rejected("no token in auth response".into()))?.to_string();
        *self.token.lock() = Some(token.clone());
        Ok(token)
    }

    /// Sends with the cached token, re-authenticating once on 401.
    async fn send_raw(&self, build: impl Fn(&reqwest::Client) -> RequestBuilder) -> Result<Response, SiemError> {
        let cached = self.token.lock().clone();
        let token = match cached {
            Some(t) => t,
            None => self.authenticate().await?,
        };
        let resp = build(&self.client).bearer_auth(&token).send().await.map_err(unavailable)?;
        if resp.status() != StatusCode::UNAUTHORIZED {
            return Ok(resp);
        }
        let token = self.authenticate().await?;
        build(&self.client).bearer_auth(&token).send().await.map_err(unavailable)
    }

    async fn send(&self, build: impl Fn(&reqwest::Client) -> RequestBuilder) -> Result<Response, SiemError> {
        check(self.send_raw(build).await?).await
    }

    async fn read_list(&self, name: &str) -> Result<BTreeMap<String, String>, SiemError> {
        let url = self.url(&format!("/lists/files/{name}"));
        let resp = self.send_raw(|c| c.get(&url).query(&[("raw", "true")])).await?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Ok(BTreeMap::new());
        }
        let text = check(resp).await?.text().await.map_err(unavailable)?;
        Ok(parse_cdb(&text)?)
    }

    async fn write_list(&self, name: &str, entries: &BTreeMap<String, String>) -> Result<(), SiemError> {
        let body = render_cdb(entries)?;
        let url = self.url(&format!("/lists/files/{name}"));
        self.send(|c| {
            c.request(Method::PUT, &url)
                .query(&[("overwrite", "true")])
                .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
                .body(body.clone())
        })
        .await?;
        Ok(())
    }

    async fn active_response(&self, command: &str, target: &str, scope: &AgentScope) -> Result<(), SiemError> {
        let url = self.url("/active-response");
        let body = json!({"command": command, "arguments": [], "alert": {"data": {"srcip": target}}});
        let agents = match scope {
            AgentScope::All => None,
            AgentScope::Agents(ids) => Some(ids.join(",")),
        };
        self.send(|c| {
            let mut r = c.request(Method::PUT, &url).json(&body);
            if let Some(a) = &agents {
                r = r.query(&[("agents_list", a.as_str())]);
            }
            r
        })
        .await?;
        Ok(())
    }
}

#[async_trait]
impl SiemConnector for WazuhConnector {
    async fn apply(&self, commands: &[SiemCommand]) -> Result<(), SiemError> {
        for c in commands {
            c.validate()?;
        }
        let _gate = self.gate.lock().await;
        let mut touched: BTreeMap<&str, BTreeMap<String, String>> = BTreeMap::new();
        for c in commands {
            let list = match c {
                SiemCommand::CdbAdd { list, .. } | SiemCommand::CdbRemove { list, .. } => list.as_str(),
                _ => continue,
            };
            if !touched.contains_key(list) {
                let current = self.read_list(list).await?;
                touched.insert(list, current);
            }
            let entries = touched.get_mut(list).expect("inserted above");
            match c {
                SiemCommand::CdbAdd { key, value, .. } => {
                    entries.insert(key.clone(), value.clone());
                }
                SiemCommand::CdbRemove { key, .. } => {
                    entries.remove(key);
                }
                _ => {}
            }
        }
        for (list, entries) in &touched {
            self.write_list(list, entries).await?;
        }
        for c in commands {
            match c {
                SiemCommand::ActiveResponseBlock { target, scope } => self.active_response(&self.config.block_command, target, scope).await?,
                SiemCommand::ActiveResponseUnblock { target, scope } => {
                    self.active_response(&self.config.unblock_command, target, scope).await?
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn name(&self) -> &'static str {
        "wazuh"
    }
}
