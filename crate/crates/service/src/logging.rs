//! Log lines as canonical JSON documents on stdout.

use std::collections::BTreeMap;
use std::io::Write;

use sentinel_core::domain::canonical::timestamp;
use serde_json::Value;
use tracing::field::{Field, Visit};
use tracing::{Event, Subscriber};
use tracing_subscriber::layer::{Context, SubscriberExt};
use tracing_subscriber::util::SubscriberInitExt;
use tracing_subscriber::{EnvFilter, Layer};

#[derive(Default)]
struct Fields(BTreeMap<String, Value>);

impl Visit for Fields {
    fn record_debug(&mut self, field: &Field, value: &dyn std::fmt::Debug) {
        self.0.insert(field.name().to_string(), Value::String(format!("{value:?}")));
    }

    fn record_str(&mut self, field: &Field, value: &str) {
        self.0.insert(field.name().to_string(), Value::String(value.to_string()));
    }

    fn record_i64(&mut self, field: &Field, value: i64) {
        self.0.insert(field.name().to_string(), value.into());
    }

    fn record_u64(&mut self, field: &Field, value: u64) {
        self.0.insert(field.name().to_string(), value.into());
    }

    fn record_bool(&mut self, field: &Field, value: bool) {
        self.0.insert(field.name().to_string(), value.into());
    }
}

/// Formats one event; map keys come out sorted.
pub fn render(level: &str, target: &str, fields: BTreeMap<String, Value>) -> String {
    let mut doc = BTreeMap::new();
    doc.insert("fields".to_string(), Value::Object(fields.into_iter().collect()));
    doc.insert("level".to_string(), Value::String(level.to_string()));
    doc.insert("target".to_string(), Value::String(target.to_string()));
    doc.insert("timestamp".to_string(), Value::String(timestamp::format(&chrono::Utc::now())));
    sentinel_core::domain::to_canonical_string(&doc).unwrap_or_default()
}

struct CanonicalLines;

impl<S: Subscriber> Layer<S> for CanonicalLines {
    fn on_event(&self, event: &Event<'_>, _: Context<'_, S>) {
        let mut fields = Fields::default();
        event.record(&mut fields);
        let meta = event.metadata();
        let line = render(meta.level().as_str(), meta.target(), fields.0);
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
    }
}

/// Installs the stdout logger; `RUST_LOG` overrides the `info` default.
pub fn init() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::registry().with(filter).with(CanonicalLines).try_init();
}
