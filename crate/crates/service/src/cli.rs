//! Command line. Exit status: 0 success, 1 user error, 2 internal error.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use contract_qa_core::cms::seed::{self, AmendmentRecord, ManagerRecord, SeedError};
use contract_qa_core::cms::{CmsStore, ContractRecord};
use contract_qa_core::config::{AppConfig, ConfigError};
use contract_qa_core::eval::{
    load_benchmark, prepare, run_benchmark, AnswerSource, EngineSource, EvalError, HttpSource,
};
use contract_qa_core::fixtures;
use contract_qa_core::ingest::PipelineError;
use contract_qa_core::orchestrator::{EngineError, Role, SessionError, SessionStore};
use tracing_subscriber::EnvFilter;

use crate::api;
use crate::app::{AppState, StartupError};

/// Used when `--config` is not given and this file exists.
pub const DEFAULT_CONFIG: &str = "config/default.toml";

#[derive(Debug, Parser)]
#[command(name = "contract-qa", version, about = "Question answering over public contracts")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CONTRACT_QA_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk, embed and index the documents listed in a manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Index directory, overriding the configuration.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Ask one question and print the answer.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "support_unit_manager")]
        role: String,
        /// Continue an existing session instead of opening a new one.
        #[arg(long)]
        session: Option<String>,
        /// Print the full answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP API.
    Serve {
        /// Listen address, overriding `server.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Port, overriding the one in the listen address. 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
        /// Directory with a static web bundle served on unmatched paths.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Load contracts, managers and amendments CSV files into the database.
    Seed {
        /// Directory holding contracts.csv, managers.csv and amendments.csv.
        #[arg(long, default_value = "fixtures")]
        fixtures: PathBuf,
        /// Database file, overriding the configuration.
        #[arg(long)]
        database: Option<PathBuf>,
    },
    /// Run the benchmark and write the report.
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Markdown report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Base URL of a running service; in-process engine when absent.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, default_value = "support_unit_manager")]
        role: String,
    },
    /// Write the synthetic corpus, database CSV files and benchmark.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<StartupError> for CliError {
    fn from(e: StartupError) -> Self {
        match e {
            StartupError::Config(c) => c.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Manifest(_) | PipelineError::Read { .. } | PipelineError::Ingest(_) => {
                CliError::User(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EmptyQuestion
            | EngineError::ContextOverflow(_)
            | EngineError::Session(SessionError::NotFound(_)) => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Read { .. } | EvalError::InvalidQuestion { .. } => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SeedError> for CliError {
    fn from(e: SeedError) -> Self {
        match e {
            SeedError::Read { .. } | SeedError::InvalidRecord { .. } => CliError::User(e.to_string()),
            SeedError::Sql(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(matches!(cli.command, Command::Serve { .. }));
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// JSON logs on stderr. `RUST_LOG` overrides the default level.
fn init_logging(serving: bool) {
    let default = if serving { "info" } else { "warn" };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None if Path::new(DEFAULT_CONFIG).exists() => Ok(AppConfig::load(Path::new(DEFAULT_CONFIG))?),
        None => {
            let cfg = AppConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn parse_role(raw: &str) -> Result<Role, CliError> {
    raw.parse().map_err(|_| {
        let known: Vec<&str> = Role::ALL.iter().map(|r| r.as_str()).collect();
        CliError::User(format!("unknown role {raw:?}; expected one of {}", known.join(", ")))
    })
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { manifest, index } => {
            if let Some(dir) = index {
                config.paths.index_dir = dir;
            }
            let state = AppState::from_config(config)?;
            let report = state.ingest(&manifest).await?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(internal)?);
            Ok(())
        }
        Command::Ask {
            question,
            role,
            session,
            json,
        } => {
            let role = parse_role(&role)?;
            let state = AppState::from_config(config)?;
            let id = match session {
                Some(id) => id,
                None => {
                    let id = state.sessions.create(role).map_err(internal)?;
                    eprintln!("session: {id}");
                    id
                }
            };
            let answer = state.engine.ask(&state.sessions, &id, &question).await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&answer).map_err(internal)?);
            } else {
                println!("{}", answer.text);
                if let Some(table) = &answer.table {
                    println!("\n{}", table.render());
                }
            }
            Ok(())
        }
        Command::Serve { bind, port, ui } => {
            let raw = bind.unwrap_or_else(|| config.server.bind.clone());
            let mut addr: SocketAddr = raw
                .parse()
                .map_err(|e| CliError::User(format!("invalid listen address {raw:?}: {e}")))?;
            if let Some(p) = port {
                addr.set_port(p);
            }
            if let Some(dir) = &ui {
                if !dir.is_dir() {
                    return Err(CliError::User(format!("UI directory {} does not exist", dir.display())));
                }
            }
            let state = Arc::new(AppState::from_config(config)?);
            if state.token.is_none() {
                tracing::warn!("no API token configured; requests are not authenticated");
            }
            let app = api::router(state, ui.as_deref());
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .map_err(|e| CliError::User(format!("cannot listen on {addr}: {e}")))?;
            let local = listener.local_addr().map_err(internal)?;
            println!("listening on http://{local}");
            let _ = std::io::stdout().flush();
            tracing::info!(address = %local, "serving");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
                .map_err(internal)
        }
        Command::Seed { fixtures, database } => {
            let db = database.unwrap_or(config.paths.database);
            let contracts: Vec<ContractRecord> = seed::read_csv(&fixtures.join("contracts.csv"))?;
            let managers: Vec<ManagerRecord> = seed::read_csv(&fixtures.join("managers.csv"))?;
            let amendments: Vec<AmendmentRecord> = seed::read_csv(&fixtures.join("amendments.csv"))?;
            if let Some(parent) = db.parent() {
                std::fs::create_dir_all(parent).map_err(internal)?;
            }
            let report = seed::seed(&db, &contracts, &managers, &amendments)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(internal)?);
            Ok(())
        }
        Command::Eval {
            questions,
            trials,
            out,
            json,
            server,
            role,
        } => {
            if trials == 0 {
                return Err(CliError::User("--trials must be at least 1".into()));
            }
            let role = parse_role(&role)?;
            let bench = load_benchmark(&questions)?;
            if !config.paths.database.exists() {
                return Err(CliError::User(format!(
                    "contract database {} not found; expected answers are computed from it (run `seed` first)",
                    config.paths.database.display()
                )));
            }
            let source: Box<dyn AnswerSource> = match server {
                Some(url) => {
                    let token = std::env::var(&config.server.token_env).ok().filter(|t| !t.is_empty());
                    Box::new(HttpSource::new(&url, role, token))
                }
                None => {
                    let state = AppState::from_config(config.clone())?;
                    Box::new(EngineSource {
                        engine: state.engine.clone(),
                        sessions: Arc::new(SessionStore::in_memory()),
                        role,
                    })
                }
            };
            let db = CmsStore::open(&config.paths.database).map_err(internal)?;
            let prepared = prepare(&bench.questions, &db)?;
            let report = run_benchmark(&prepared, source.as_ref(), trials).await?;
            match out {
                Some(path) => std::fs::write(&path, report.markdown())
                    .map_err(|e| internal(format!("cannot write {}: {e}", path.display())))?,
                None => print!("{}", report.markdown()),
            }
            if let Some(path) = json {
                std::fs::write(&path, report.json())
                    .map_err(|e| internal(format!("cannot write {}: {e}", path.display())))?;
            }
            eprintln!(
                "{}/{} questions correct in every trial",
                report.fully_correct(),
                report.rows.len()
            );
            Ok(())
        }
        Command::GenFixtures { out, seed } => {
            let set = fixtures::generate(seed);
            fixtures::write(&set, &out).map_err(|e| internal(format!("cannot write {}: {e}", out.display())))?;
            println!("fixtures written to {}", out.display());
            Ok(())
        }
    }
}
