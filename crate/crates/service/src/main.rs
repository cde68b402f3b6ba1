use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sentinel_core::domain::{to_canonical_string, AgentTurn, SourceId};
use sentinel_core::llm::{AuthoredScript, ScriptedBackend};
use sentinel_core::transcripts::{record_into, replay_script};
use sentinel_service::config::{Settings, CONFIG_ENV, TOKEN_ENV};
use sentinel_service::query::QueryParams;
use sentinel_service::{app, logging, App};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Conversational security-operations agent")]
struct Cli {
    /// Settings file; defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket service.
    Serve,
    /// Pull one threat feed, or all of them, into the store.
    Sync {
        /// A source id or `all`.
        source: String,
    },
    /// Query the local indicator store.
    Query(QueryArgs),
    /// Interactive session, in-process or against a running service.
    Chat {
        /// Base URL of a running service, e.g. http://127.0.0.1:8080.
        #[arg(long)]
        url: Option<String>,
    },
    /// Record or replay scripted model fixtures.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long = "type")]
    index_type: Option<String>,
    #[arg(long)]
    value: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    /// Window ending now: 30m, 24h, 7d, 2w.
    #[arg(long)]
    last: Option<String>,
    /// Comma-separated source ids.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Run the authored script and write digest-named fixtures.
    Record {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the script against recorded fixtures, one line per turn.
    Replay {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(code) => code,
        // the reader went away, e.g. `sentinel query | head`
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_line<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", to_canonical_string(value)?)?;
    Ok(())
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let settings = || Settings::load(cli.config.as_deref()).context("loading settings");
    match cli.command {
        Command::Serve => {
            logging::init();
            let settings = settings()?;
            let token = sentinel_service::api_token(&settings)?;
            let app = App::build(settings)?;
            sentinel_service::serve(app, token, sentinel_service::shutdown_signal()).await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sync { source } => {
            let settings = settings()?;
            let store = app::open_store(&settings)?;
            let syncer = app::syncer(&settings)?;
            let ids: Vec<SourceId> = if source == "all" { SourceId::ALL.to_vec() } else { vec![source.parse()?] };
            let mut failed = false;
            for id in ids {
                match syncer.sync(id, &store).await {
                    Ok(Some(report)) => print_line(&report)?,
                    Ok(None) => print_line(&json!({"source": id, "status": "skipped"}))?,
                    Err(e) => {
                        eprintln!("error: {id}: {e}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Query(q) => {
            let settings = settings()?;
            let params = QueryParams {
                index_type: q.index_type,
                value: q.value,
                port: q.port,
                from: q.from,
                to: q.to,
                last: q.last,
                source: q.source,
                limit: q.limit,
            };
            let now = app::clock(&settings)?.now();
            let filter = params.to_filter(now).map_err(anyhow::Error::msg)?;
            let store = app::open_store(&settings)?;
            print_line(&store.query(&filter)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Chat { url } => {
            let settings = settings()?;
            match url {
                Some(url) => chat_remote(&url).await?,
                None => chat_local(settings).await?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures { action: FixtureAction::Record { script, out } } => {
            let script = load_script(&script)?;
            let n = record_into(&script, &out).await?;
            print_line(&json!({"recorded": n, "dir": out.display().to_string()}))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures { action: FixtureAction::Replay { script, dir } } => {
            let script = load_script(&script)?;
            let backend = ScriptedBackend::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
            for t in replay_script(&script, Arc::new(backend)).await? {
                print_line(&json!({"session": t.session, "message": t.message, "turn": t.turn}))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_script(path: &std::path::Path) -> anyhow::Result<AuthoredScript> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(AuthoredScript::from_toml(&text)?)
}

fn render_turn(turn: &AgentTurn) -> String {
    match turn {
        AgentTurn::ConfirmationRequest { summary, .. } => format!("{summary}\n[yes/no]"),
        AgentTurn::Clarification { text, missing } => {
            let names: Vec<&str> = missing.iter().map(|m| m.as_str()).collect();
            format!("{text}\n(missing: {})", names.join(", "))
        }
        other => other.text().to_string(),
    }
}

fn prompt() -> Option<String> {
    print!("> ");
    let _ = std::io::stdout().flush();
    let mut line = String::new();
    match std::io::stdin().lock().read_line(&mut line) {
        Ok(0) | Err(_) => None,
        Ok(_) => Some(line.trim_end_matches(['\r', '\n']).to_string()),
    }
}

async fn chat_local(settings: Settings) -> anyhow::Result<()> {
    let app = App::build(settings)?;
    let record = app.sessions.create()?;
    println!("session {}", record.session_id);
    while let Some(line) = prompt() {
        if line.trim().is_empty() {
            continue;
        }
        match app.sessions.post_message(&record.session_id, &line).await {
            Ok(turn) => println!("{}", render_turn(&turn)),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}

async fn chat_remote(url: &str) -> anyhow::Result<()> {
    let base = url.trim_end_matches('/');
    let client = reqwest::Client::new();
    let token = std::env::var(TOKEN_ENV).ok();
    let send = |req: reqwest::RequestBuilder| match &token {
        Some(t) => req.bearer_auth(t),
        None => req,
    };
    let resp = send(client.post(format!("{base}/api/sessions"))).send().await?;
    if !resp.status().is_success() {
        bail!("creating a session failed: {}", resp.text().await.unwrap_or_default());
    }
    let created: Value = resp.json().await?;
    let id = created["session_id"].as_str().context("no session id in response")?.to_string();
    println!("session {id}");
    while let Some(line) = prompt() {
        if line.trim().is_empty() {
            continue;
        }
        let resp = send(client.post(format!("{base}/api/sessions/{id}/messages"))).json(&json!({"text": line})).send().await?;
        let ok = resp.status().is_success();
        let body: Value = resp.json().await?;
        if ok {
            let turn: AgentTurn = serde_json::from_value(body)?;
            println!("{}", render_turn(&turn));
        } else {
            eprintln!("error: {}", body["error"]["message"].as_str().unwrap_or("request failed"));
        }
    }
    Ok(())
}
