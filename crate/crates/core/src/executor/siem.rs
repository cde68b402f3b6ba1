use std::collections::BTreeMap;
use std::sync::LazyLock;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cdb::{check_key, render_cdb, CdbError};

static LIST_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[a-z0-9-]+$").unwrap());

/// Which agents an active response targets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentScope {
    #[default]
    All,
    Agents(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SiemCommand {
    CdbAdd { list: String, key: String, value: String },
    CdbRemove { list: String, key: String },
    ActiveResponseBlock { target: String, scope: AgentScope },
    ActiveResponseUnblock { target: String, scope: AgentScope },
}

impl SiemCommand {
    pub fn validate(&self) -> Result<(), SiemError> {
        match self {
            SiemCommand::CdbAdd { list, key, .. } | SiemCommand::CdbRemove { list, key } => {
                if !LIST_NAME.is_match(list) {
                    return Err(SiemError::Rejected(format!("bad list name {list:?}")));
                }
                check_key(key)?;
            }
            SiemCommand::ActiveResponseBlock { target, .. } | SiemCommand::ActiveResponseUnblock { target, .. } => {
                if target.is_empty() {
                    return Err(SiemError::Rejected("empty active-response target".into()));
                }
            }
        }
        Ok(())
    }

    /// IP or subnet an active-response command targets.
    pub fn network_target(&self) -> Option<&str> {
        match self {
            SiemCommand::ActiveResponseBlock { target, .. } | SiemCommand::ActiveResponseUnblock { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn is_block(&self) -> bool {
        matches!(self, SiemCommand::CdbAdd { .. } | SiemCommand::ActiveResponseBlock { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SiemError {
    #[error("SIEM unavailable: {0}")]
    Unavailable(String),
    #[error("SIEM rejected the request: {0}")]
    Rejected(String),
    #[error(transparent)]
    Cdb(#[from] CdbError),
}

/// A SIEM that accepts batches of commands. Each call applies one step's batch.
#[async_trait]
pub trait SiemConnector: Send + Sync {
    async fn apply(&self, commands: &[SiemCommand]) -> Result<(), SiemError>;

    fn name(&self) -> &'static str;
}

#[async_trait]
impl<T: SiemConnector + ?Sized> SiemConnector for std::sync::Arc<T> {
    async fn apply(&self, commands: &[SiemCommand]) -> Result<(), SiemError> {
        (**self).apply(commands).await
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Down,
    Slow(Duration),
    Reject,
}

#[derive(Debug, Default)]
struct MockState {
    calls: Vec<SiemCommand>,
    batches: usize,
    lists: BTreeMap<String, BTreeMap<String, String>>,
    blocked: BTreeMap<String, AgentScope>,
    fault: Option<Fault>,
}

/// In-memory SIEM with a call log and fault injection.
#[derive(Debug, Default)]
pub struct MockSiem {
    state: Mutex<MockState>,
    // serializes batches like the real connector
    gate: tokio::sync::Mutex<()>,
}

impl MockSiem {
    pub fn new() -> MockSiem {
        MockSiem::default()
    }

    pub fn set_fault(&self, fault: Option<Fault>) {
        self.state.lock().fault = fault;
    }

    /// Every command accepted so far, in order.
    pub fn calls(&self) -> Vec<SiemCommand> {
        self.state.lock().calls.clone()
    }

    pub fn batches(&self) -> usize {
        self.state.lock().batches
    }

    pub fn list(&self, name: &str) -> BTreeMap<String, String> {
        self.state.lock().lists.get(name).cloned().unwrap_or_default()
    }

    /// The list as the CDB file the SIEM would hold.
    pub fn list_file(&self, name: &str) -> Result<String, CdbError> {
        render_cdb(&self.list(name))
    }

    pub fn blocked(&self) -> Vec<String> {
        self.state.lock().blocked.keys().cloned().collect()
    }

    pub fn reset(&self) {
        let mut s = self.state.lock();
        let fault = s.fault;
        *s = MockState { fault, ..MockState::default() };
    }
}

#[async_trait]
impl SiemConnector for MockSiem {
    async fn apply(&self, commands: &[SiemCommand]) -> Result<(), SiemError> {
        let _gate = self.gate.lock().await;
        let fault = self.state.lock().fault;
        match fault {
            Some(Fault::Down) => return Err(SiemError::Unavailable("mock SIEM is down".into())),
            Some(Fault::Reject) => return Err(SiemError::Rejected("mock SIEM rejects commands".into())),
            Some(Fault::Slow(d)) => tokio::time::sleep(d).await,
            None => {}
        }
        for c in commands {
            c.validate()?;
        }
        let mut s = self.state.lock();
        s.batches += 1;
        for c in commands {
            match c {
                SiemCommand::CdbAdd { list, key, value } => {
                    s.lists.entry(list.clone()).or_default().insert(key.clone(), value.clone());
                }
                SiemCommand::CdbRemove { list, key } => {
                    s.lists.entry(list.clone()).or_default().remove(key);
                }
                SiemCommand::ActiveResponseBlock { target, scope } => {
                    s.blocked.insert(target.clone(), scope.clone());
                }
                SiemCommand::ActiveResponseUnblock { target, .. } => {
                    s.blocked.remove(target);
                }
            }
            s.calls.push(c.clone());
        }
        Ok(())
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}
