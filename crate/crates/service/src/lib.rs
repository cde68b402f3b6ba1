//! Deployable agent: sessions over HTTP/WebSocket, audit log, feed polling.

pub mod api;
pub mod app;
pub mod audit;
pub mod config;
pub mod error;
pub mod logging;
pub mod query;
pub mod sessions;

use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use tokio::sync::watch;

pub use app::App;
pub use config::Settings;
pub use error::ServiceError;

/// Bearer token from `SENTINEL_API_TOKEN`, unless the settings allow running open.
pub fn api_token(settings: &Settings) -> anyhow::Result<Option<Arc<str>>> {
    match std::env::var(config::TOKEN_ENV) {
        Ok(t) if !t.is_empty() => Ok(Some(Arc::from(t))),
        _ if settings.allow_unauthenticated => {
            tracing::warn!("serving without authentication");
            Ok(None)
        }
        _ => bail!("{} is not set and allow_unauthenticated is false", config::TOKEN_ENV),
    }
}

pub fn api_state(app: &App, token: Option<Arc<str>>) -> api::ApiState {
    api::ApiState { sessions: app.sessions.clone(), store: app.store.clone(), syncer: app.syncer.clone(), token }
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(app: App, token: Option<Arc<str>>, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(&app.settings.listen).await.with_context(|| format!("binding {}", app.settings.listen))?;
    let addr = listener.local_addr()?;
    tracing::info!(addr = %addr, "listening");

    let (stop_tx, stop_rx) = watch::channel(false);
    let poller = (app.settings.feeds.poll_interval_secs > 0).then(|| {
        let interval = Duration::from_secs(app.settings.feeds.poll_interval_secs);
        tokio::spawn(sentinel_core::feeds::run_polling(app.syncer.clone(), app.store.clone(), interval, stop_rx))
    });

    // room for the largest message plus its JSON envelope
    let router = api::router(api_state(&app, token), app.settings.max_message_bytes * 2 + 1024);
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await.context("server")?;
    let _ = stop_tx.send(true);
    if let Some(p) = poller {
        let _ = p.await;
    }
    tracing::info!("stopped");
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
