use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, LlmError, PromptId};

/// Contents of one `<digest>.json` fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<PromptId>,
    /// Last user message of the request, for humans reading the fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    pub completions: Vec<String>,
}

impl FixtureEntry {
    pub fn to_file_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture serializes");
        s.push('\n');
        s
    }
}

/// Replays completions keyed by request digest.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    entries: BTreeMap<String, FixtureEntry>,
}

impl ScriptedBackend {
    pub fn from_entries(entries: BTreeMap<String, FixtureEntry>) -> ScriptedBackend {
        ScriptedBackend { entries }
    }

    /// Loads every `<digest>.json` in `dir`.
    pub fn load(dir: &Path) -> std::io::Result<ScriptedBackend> {
        let mut entries = BTreeMap::new();
        for item in std::fs::read_dir(dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(digest) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = std::fs::read_to_string(&path)?;
            let entry: FixtureEntry = serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            entries.insert(digest.to_string(), entry);
        }
        Ok(ScriptedBackend { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        let digest = request.digest();
        match self.entries.get(&digest) {
            Some(e) => Ok(e.completions.clone()),
            None => Err(LlmError::FixtureMiss { digest }),
        }
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Answers requests in arrival order from a fixed list; used to author fixtures.
#[derive(Debug, Default)]
pub struct QueueBackend {
    queue: Mutex<VecDeque<Vec<String>>>,
}

impl QueueBackend {
    pub fn new(answers: impl IntoIterator<Item = Vec<String>>) -> QueueBackend {
        QueueBackend { queue: Mutex::new(answers.into_iter().collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().len()
    }
}

#[async_trait]
impl ChatBackend for QueueBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        self.queue.lock().pop_front().ok_or_else(|| LlmError::FixtureMiss { digest: request.digest() })
    }

    fn name(&self) -> &'static str {
        "queue"
    }
}

/// One hand-written answer in an authoring script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoredEntry {
    pub purpose: PromptId,
    /// Exact last user message the answer is for.
    pub user: String,
    /// Restricts the entry to prompts rendered at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub now: Option<String>,
    pub completions: Vec<String>,
}

/// Messages sent, in order, to one fresh session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSession {
    pub now: String,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoredScript {
    #[serde(default, rename = "session")]
    pub sessions: Vec<ScriptSession>,
    #[serde(default, rename = "entry")]
    pub entries: Vec<AuthoredEntry>,
}

impl AuthoredScript {
    pub fn from_toml(text: &str) -> Result<AuthoredScript, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Answers from an authoring script by prompt, user text and time, so
/// fixtures can be written by hand and then recorded under their digests.
#[derive(Debug, Clone, Default)]
pub struct AuthoredBackend {
    script: AuthoredScript,
}

impl AuthoredBackend {
    pub fn new(script: AuthoredScript) -> AuthoredBackend {
        AuthoredBackend { script }
    }
}

#[async_trait]
impl ChatBackend for AuthoredBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        let user = request.last_user().unwrap_or("");
        let system = request.system();
        self.script
            .entries
            .iter()
            .find(|e| {
                Some(e.purpose) == request.purpose
                    && e.user == user
                    && e.now.as_ref().is_none_or(|n| system.contains(&format!("Current date and time: {n}")))
            })
            .map(|e| e.completions.clone())
            .ok_or_else(|| LlmError::FixtureMiss { digest: request.digest() })
    }

    fn name(&self) -> &'static str {
        "authored"
    }
}

/// Passes requests through and remembers each answer under its digest.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, FixtureEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> RecordingBackend<B> {
        RecordingBackend { inner, recorded: Mutex::new(BTreeMap::new()) }
    }

    pub fn entries(&self) -> BTreeMap<String, FixtureEntry> {
        self.recorded.lock().clone()
    }

    /// Writes one file per recorded digest, leaving other files alone.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let entries = self.entries();
        for (digest, e) in &entries {
            std::fs::write(dir.join(format!("{digest}.json")), e.to_file_text())?;
        }
        Ok(entries.len())
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        let out = self.inner.complete(request).await?;
        let entry = FixtureEntry {
            purpose: request.purpose,
            user: request.last_user().map(str::to_string),
            completions: out.clone(),
        };
        self.recorded.lock().insert(request.digest(), entry);
        Ok(out)
    }

    fn name(&self) -> &'static str {
        "recording"
    }
}
