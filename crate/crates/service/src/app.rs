//! Long-lived application state assembled from an [`AppConfig`].

use std::path::Path;
use std::sync::Arc;

use contract_qa_core::cms::{CmsError, CmsStore};
use contract_qa_core::config::{AppConfig, ConfigError};
use contract_qa_core::index::{IndexError, VectorIndex};
use contract_qa_core::ingest::{ingest_entries, load_manifest, IngestReport, PipelineError};
use contract_qa_core::llm::ChatProvider;
use contract_qa_core::orchestrator::{Engine, EngineError, EngineParts, SessionError, SessionStore};
use contract_qa_core::sql_agent::AuditLog;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open index: {0}")]
    Index(#[from] IndexError),
    #[error("cannot open contract database: {0}")]
    Database(#[from] CmsError),
    #[error("cannot open sessions: {0}")]
    Session(#[from] SessionError),
    #[error("cannot start engine: {0}")]
    Engine(#[from] EngineError),
    #[error("cannot open SQL audit log: {0}")]
    Audit(std::io::Error),
}

pub struct AppState {
    pub engine: Engine,
    pub sessions: Arc<SessionStore>,
    pub config: AppConfig,
    /// Bearer token required on every route but `/health`.
    pub token: Option<String>,
    ingest_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn from_config(config: AppConfig) -> Result<Self, StartupError> {
        let llm = config.chat_provider();
        Self::with_llm(config, llm)
    }

    /// Same as [`AppState::from_config`] with an explicit language model.
    /// The token is read from the variable named by `server.token_env`.
    pub fn with_llm(config: AppConfig, llm: Arc<dyn ChatProvider>) -> Result<Self, StartupError> {
        config.validate()?;
        let embedder = config.embedding_provider();
        let index = Arc::new(VectorIndex::open_or_create(
            &config.paths.index_dir,
            config.index_meta(embedder.as_ref()),
        )?);
        let db = if config.paths.database.exists() {
            Some(Arc::new(CmsStore::open(&config.paths.database)?))
        } else {
            tracing::warn!(
                database = %config.paths.database.display(),
                "contract database not found; answering from documents only"
            );
            None
        };
        let sessions = Arc::new(match &config.paths.sessions_dir {
            Some(dir) => SessionStore::persistent(dir)?,
            None => SessionStore::in_memory(),
        });
        let audit = match &config.paths.sql_audit_log {
            Some(path) => Some(AuditLog::open(path).map_err(StartupError::Audit)?),
            None => None,
        };
        let engine = Engine::new(EngineParts {
            index,
            db,
            llm,
            embedder,
            config: config.engine.clone(),
            audit,
        })?;
        let token = std::env::var(&config.server.token_env).ok().filter(|t| !t.is_empty());
        Ok(Self {
            engine,
            sessions,
            config,
            token,
            ingest_lock: tokio::sync::Mutex::new(()),
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    /// Ingests a manifest into the engine's index. Ingests are serialized.
    pub async fn ingest(&self, manifest: &Path) -> Result<IngestReport, PipelineError> {
        let _guard = self.ingest_lock.lock().await;
        let entries = load_manifest(manifest)?;
        let rules = self.config.heading_rules().expect("heading rules validated at startup");
        ingest_entries(
            &entries,
            &rules,
            self.engine.embedder().as_ref(),
            self.engine.index(),
            self.engine.db().map(|d| d.as_ref()),
        )
        .await
    }
}
