//! Builds the running pieces from settings.

use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use sentinel_core::dialogue::{Clock, Engine, FixedClock, SystemClock};
use sentinel_core::domain::canonical::timestamp;
use sentinel_core::executor::{Executor, MockSiem, SiemConnector, WazuhConnector};
use sentinel_core::feeds::{FeedCatalog, FeedFetcher, FeedSyncer, RetryPolicy, DEFAULT_MAPPINGS};
use sentinel_core::llm::{ChatBackend, FallbackBackend, RemoteBackend, RuleBasedBackend, ScriptedBackend, Templates};
use sentinel_core::store::IocStore;

use crate::audit::AuditLog;
use crate::config::{FeedMode, LlmKind, Settings, SiemKind};
use crate::sessions::SessionManager;

pub struct App {
    pub settings: Settings,
    pub store: Arc<IocStore>,
    pub syncer: Arc<FeedSyncer>,
    pub siem: Arc<dyn SiemConnector>,
    pub sessions: Arc<SessionManager>,
}

pub fn clock(settings: &Settings) -> anyhow::Result<Arc<dyn Clock>> {
    Ok(match &settings.clock.fixed {
        Some(raw) => {
            let at = timestamp::parse_lenient(raw).with_context(|| format!("clock.fixed: cannot read {raw:?}"))?;
            Arc::new(FixedClock::new(at))
        }
        None => Arc::new(SystemClock),
    })
}

pub fn backend(settings: &Settings) -> anyhow::Result<Arc<dyn ChatBackend>> {
    let llm = &settings.llm;
    Ok(match llm.backend {
        LlmKind::Rules => Arc::new(RuleBasedBackend),
        LlmKind::Scripted => {
            let b = ScriptedBackend::load(&llm.fixtures_dir).with_context(|| format!("loading fixtures from {}", llm.fixtures_dir.display()))?;
            if b.is_empty() {
                bail!("no fixtures in {}", llm.fixtures_dir.display());
            }
            Arc::new(b)
        }
        LlmKind::Remote => {
            let remote = RemoteBackend::new(llm.remote.clone()).context("configuring the remote model")?;
            if llm.fallback_to_rules {
                Arc::new(FallbackBackend { primary: remote, fallback: RuleBasedBackend })
            } else {
                Arc::new(remote)
            }
        }
    })
}

pub fn siem(settings: &Settings) -> anyhow::Result<Arc<dyn SiemConnector>> {
    Ok(match settings.siem.backend {
        SiemKind::Mock => Arc::new(MockSiem::new()),
        SiemKind::Wazuh => Arc::new(WazuhConnector::from_env(settings.siem.wazuh.clone()).context("configuring wazuh")?),
    })
}

pub fn syncer(settings: &Settings) -> anyhow::Result<FeedSyncer> {
    let feeds = &settings.feeds;
    let mappings = match &feeds.mappings {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_MAPPINGS.to_string(),
    };
    let catalog = FeedCatalog::from_toml(&mappings).context("feed mappings")?;
    let fetcher = match feeds.mode {
        FeedMode::Fixtures => FeedFetcher::fixtures(&feeds.fixtures_dir, &feeds.scenario),
        FeedMode::Live => {
            let retry = RetryPolicy { attempts: feeds.retry_attempts.max(1), ..RetryPolicy::default() };
            FeedFetcher::live(Duration::from_secs(feeds.timeout_secs), retry).context("feed http client")?
        }
    };
    Ok(FeedSyncer::new(catalog, fetcher, feeds.overlap))
}

pub fn open_store(settings: &Settings) -> anyhow::Result<IocStore> {
    let dir = settings.store_dir();
    IocStore::open(&dir).with_context(|| format!("opening store at {}", dir.display()))
}

impl App {
    pub fn build(settings: Settings) -> anyhow::Result<App> {
        let store = Arc::new(open_store(&settings)?);
        App::with_store(settings, store, None)
    }

    /// Uses the given store and, when provided, SIEM connector instead of the configured one.
    pub fn with_store(settings: Settings, store: Arc<IocStore>, siem_override: Option<Arc<dyn SiemConnector>>) -> anyhow::Result<App> {
        let siem = match siem_override {
            Some(s) => s,
            None => siem(&settings)?,
        };
        let mut templates = Templates::default();
        if let Some(dir) = &settings.llm.templates_dir {
            templates = templates.with_overrides(dir).context("prompt templates")?;
        }
        let executor = Executor::new(store.clone(), siem.clone(), settings.actions.clone());
        let engine = Engine::new(backend(&settings)?, executor, clock(&settings)?)
            .with_templates(templates)
            .with_config(settings.engine.clone());
        let audit = Arc::new(AuditLog::open(settings.audit_path(), settings.audit.redact_keys.clone()).context("opening audit log")?);
        let sessions = Arc::new(SessionManager::new(
            Arc::new(engine),
            audit,
            Some(settings.sessions_dir()),
            settings.queue_depth,
            settings.max_message_bytes,
        ));
        let syncer = Arc::new(syncer(&settings)?);
        Ok(App { settings, store, syncer, siem, sessions })
    }
}
