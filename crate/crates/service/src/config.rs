//! Service settings: a TOML file plus `SENTINEL__SECTION__KEY` overrides.

use std::path::{Path, PathBuf};

use sentinel_core::dialogue::EngineConfig;
use sentinel_core::executor::{ActionSettings, WazuhConfig};
use sentinel_core::feeds::OverlapPolicy;
use sentinel_core::llm::RemoteConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "SENTINEL_CONFIG";
pub const TOKEN_ENV: &str = "SENTINEL_API_TOKEN";
const OVERRIDE_PREFIX: &str = "SENTINEL__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("override {var}: {reason}")]
    Override { var: String, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Remote,
    Scripted,
    #[default]
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub backend: LlmKind,
    /// Answer from the rule-based backend when the remote model is unreachable.
    pub fallback_to_rules: bool,
    /// Digest-named fixtures for the scripted backend.
    pub fixtures_dir: PathBuf,
    /// Optional directory of `<prompt-id>.txt` template overrides.
    pub templates_dir: Option<PathBuf>,
    pub remote: RemoteConfig,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            backend: LlmKind::Rules,
            fallback_to_rules: true,
            fixtures_dir: PathBuf::from("fixtures/llm/recorded"),
            templates_dir: None,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiemKind {
    #[default]
    Mock,
    Wazuh,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiemSettings {
    pub backend: SiemKind,
    pub wazuh: WazuhConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedMode {
    #[default]
    Fixtures,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedSettings {
    pub mode: FeedMode,
    pub fixtures_dir: PathBuf,
    pub scenario: String,
    /// Replaces the built-in source mappings.
    pub mappings: Option<PathBuf>,
    /// Zero disables background polling.
    pub poll_interval_secs: u64,
    pub timeout_secs: u64,
    pub retry_attempts: u32,
    pub overlap: OverlapPolicy,
}

impl Default for FeedSettings {
    fn default() -> Self {
        FeedSettings {
            mode: FeedMode::Fixtures,
            fixtures_dir: PathBuf::from("fixtures/feeds"),
            scenario: "default".into(),
            mappings: None,
            poll_interval_secs: 15 * 60,
            timeout_secs: 30,
            retry_attempts: 3,
            overlap: OverlapPolicy::Queue,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditSettings {
    /// Object keys whose values are replaced before an entry is written.
    pub redact_keys: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockSettings {
    /// Pins the agent clock, e.g. for replaying recorded sessions.
    pub fixed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub listen: String,
    pub data_dir: PathBuf,
    pub max_message_bytes: usize,
    /// Messages that may wait behind the one being processed, per session.
    pub queue_depth: usize,
    /// Serve without a bearer token. Only for local development.
    pub allow_unauthenticated: bool,
    pub llm: LlmSettings,
    pub engine: EngineConfig,
    pub siem: SiemSettings,
    pub actions: ActionSettings,
    pub feeds: FeedSettings,
    pub audit: AuditSettings,
    pub clock: ClockSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            max_message_bytes: 8 * 1024,
            queue_depth: 4,
            allow_unauthenticated: false,
            llm: LlmSettings::default(),
            engine: EngineConfig::default(),
            siem: SiemSettings::default(),
            actions: ActionSettings::default(),
            feeds: FeedSettings::default(),
            audit: AuditSettings::default(),
            clock: ClockSettings::default(),
        }
    }
}

impl Settings {
    /// Parses `text` and applies overrides from `vars`.
    pub fn from_toml_with<I>(text: &str, vars: I) -> Result<Settings, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text)?;
        for (var, raw) in vars {
            let Some(path) = var.strip_prefix(OVERRIDE_PREFIX) else { continue };
            let keys: Vec<String> = path.split("__").map(str::to_ascii_lowercase).collect();
            if keys.iter().any(String::is_empty) {
                return Err(ConfigError::Override { var, reason: "empty key segment".into() });
            }
            set_path(&mut table, &keys, parse_scalar(&raw)).map_err(|reason| ConfigError::Override { var: var.clone(), reason })?;
        }
        Ok(toml::Value::Table(table).try_into()?)
    }

    /// Reads `path` (or only defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Settings, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        let mut settings = Settings::from_toml_with(&text, std::env::vars())?;
        if let Some(base) = path.and_then(Path::parent) {
            settings.resolve_relative_to(base);
        }
        Ok(settings)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.llm.fixtures_dir);
        fix(&mut self.feeds.fixtures_dir);
        if let Some(p) = self.llm.templates_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.feeds.mappings.as_mut() {
            fix(p);
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.data_dir.join("store")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }

    pub fn audit_path(&self) -> PathBuf {
        self.data_dir.join("audit.ndjson")
    }
}

// numbers and booleans keep their type; anything else is a string
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<(), String> {
    let (last, parents) = keys.split_last().ok_or("no key")?;
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("{k} is not a table"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}
