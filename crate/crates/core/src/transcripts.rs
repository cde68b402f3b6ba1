//! Recording scripted conversations into digest-keyed LLM fixtures.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::dialogue::{Engine, EngineError, FixedClock};
use crate::domain::AgentTurn;
use crate::domain::canonical::timestamp;
use crate::events::NullSink;
use crate::executor::{ActionSettings, Executor, MockSiem};
use crate::llm::{AuthoredBackend, AuthoredScript, ChatBackend, FixtureEntry, RecordingBackend};
use crate::store::IocStore;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("bad script: {0}")]
    Script(String),
    #[error("session {session}, message {message:?}: {source}")]
    Turn { session: usize, message: String, source: EngineError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs every session of `script` against an empty store and a mock SIEM and
/// returns each model request under its digest. Pending confirmations are
/// left unanswered, so nothing is executed.
pub async fn record_script(script: &AuthoredScript) -> Result<std::collections::BTreeMap<String, FixtureEntry>, RecordError> {
    let recorder = Arc::new(RecordingBackend::new(AuthoredBackend::new(script.clone())));
    for (i, session) in script.sessions.iter().enumerate() {
        let now = timestamp::parse_lenient(&session.now).ok_or_else(|| RecordError::Script(format!("bad time {:?}", session.now)))?;
        let executor = Executor::new(Arc::new(IocStore::in_memory()), Arc::new(MockSiem::new()), ActionSettings::default());
        let engine = Engine::new(recorder.clone(), executor, Arc::new(FixedClock::new(now)));
        let mut state = engine.new_session(format!("script-{}", i + 1)).map_err(|source| RecordError::Turn {
            session: i + 1,
            message: String::new(),
            source,
        })?;
        for message in &session.messages {
            let (next, _) = engine
                .next_turn(&state, message, &NullSink)
                .await
                .map_err(|source| RecordError::Turn { session: i + 1, message: message.clone(), source })?;
            state = next;
        }
    }
    Ok(recorder.entries())
}

/// One replayed user message and the agent's answer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedTurn {
    pub session: usize,
    pub message: String,
    pub turn: AgentTurn,
}

/// Replays every session of `script` against `backend` (normally the recorded
/// fixtures), each with its own empty store, mock SIEM and pinned clock.
pub async fn replay_script(script: &AuthoredScript, backend: Arc<dyn ChatBackend>) -> Result<Vec<ReplayedTurn>, RecordError> {
    let mut out = Vec::new();
    for (i, session) in script.sessions.iter().enumerate() {
        let now = timestamp::parse_lenient(&session.now).ok_or_else(|| RecordError::Script(format!("bad time {:?}", session.now)))?;
        let executor = Executor::new(Arc::new(IocStore::in_memory()), Arc::new(MockSiem::new()), ActionSettings::default());
        let engine = Engine::new(backend.clone(), executor, Arc::new(FixedClock::new(now)));
        let mut state = engine
            .new_session(format!("script-{}", i + 1))
            .map_err(|source| RecordError::Turn { session: i + 1, message: String::new(), source })?;
        for message in &session.messages {
            let (next, turn) = engine
                .next_turn(&state, message, &NullSink)
                .await
                .map_err(|source| RecordError::Turn { session: i + 1, message: message.clone(), source })?;
            state = next;
            out.push(ReplayedTurn { session: i + 1, message: message.clone(), turn });
        }
    }
    Ok(out)
}

/// Records `script` into `dir`, replacing any `.json` fixtures already there.
pub async fn record_into(script: &AuthoredScript, dir: &Path) -> Result<usize, RecordError> {
    let entries = record_script(script).await?;
    std::fs::create_dir_all(dir)?;
    for item in std::fs::read_dir(dir)? {
        let path = item?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            std::fs::remove_file(path)?;
        }
    }
    for (digest, e) in &entries {
        std::fs::write(dir.join(format!("{digest}.json")), e.to_file_text())?;
    }
    Ok(entries.len())
}
