//! Application configuration, read from TOML. Relative paths resolve against
//! the directory of the configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{EmbeddingProvider, HashedBagOfWords, IndexMeta, Metric, RemoteEmbeddings};
use crate::ingest::{HeadingRules, IngestError, DEFAULT_FALLBACK, DEFAULT_PRIMARY};
use crate::llm::{ChatProvider, FixtureAnalyst, RemoteChat};
use crate::orchestrator::EngineConfig;
use crate::remote::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Headings(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub database: PathBuf,
    pub index_dir: PathBuf,
    /// Absent keeps sessions in memory only.
    pub sessions_dir: Option<PathBuf>,
    pub sql_audit_log: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            database: "data/cms.db".into(),
            index_dir: "data/index".into(),
            sessions_dir: Some("data/sessions".into()),
            sql_audit_log: Some("data/sql_audit.jsonl".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    /// Deterministic rule-based analyst; no network.
    #[default]
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: LlmKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Hashed bag of words; deterministic, no network.
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingKind,
    pub dimension: usize,
    pub metric: Metric,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Local,
            dimension: 512,
            metric: Metric::Cosine,
            base_url: None,
            model: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Clause heading patterns, one regex per heading form.
    pub headings: Vec<String>,
    /// Used only for documents where no `headings` pattern matches.
    pub fallback_headings: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            headings: DEFAULT_PRIMARY.iter().map(|s| (*s).to_owned()).collect(),
            fallback_headings: DEFAULT_FALLBACK.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Environment variable holding the bearer token. Unset variable means
    /// no authentication.
    pub token_env: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            token_env: "QA_API_TOKEN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub engine: EngineConfig,
    pub llm: LlmConfig,
    pub embeddings: EmbeddingConfig,
    pub ingest: IngestConfig,
    pub server: ServerConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: AppConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.database);
        join(&mut self.paths.index_dir);
        if let Some(p) = self.paths.sessions_dir.as_mut() {
            join(p);
        }
        if let Some(p) = self.paths.sql_audit_log.as_mut() {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if e.k == 0 {
            return Err(ConfigError::Invalid("engine.k must be positive".into()));
        }
        if e.max_rows == 0 {
            return Err(ConfigError::Invalid("engine.max_rows must be positive".into()));
        }
        if e.context_budget_chars == 0 || e.agent_timeout_ms == 0 || e.sql_timeout_ms == 0 {
            return Err(ConfigError::Invalid(
                "engine budgets and timeouts must be positive".into(),
            ));
        }
        if self.embeddings.dimension == 0 {
            return Err(ConfigError::Invalid("embeddings.dimension must be positive".into()));
        }
        if self.llm.provider == LlmKind::Remote && (self.llm.base_url.is_none() || self.llm.model.is_none()) {
            return Err(ConfigError::Invalid(
                "llm.provider = \"remote\" needs base_url and model".into(),
            ));
        }
        if self.embeddings.provider == EmbeddingKind::Remote
            && (self.embeddings.base_url.is_none() || self.embeddings.model.is_none())
        {
            return Err(ConfigError::Invalid(
                "embeddings.provider = \"remote\" needs base_url and model".into(),
            ));
        }
        self.heading_rules()?;
        Ok(())
    }

    pub fn heading_rules(&self) -> Result<HeadingRules, ConfigError> {
        Ok(HeadingRules::new(
            &self.ingest.headings,
            &self.ingest.fallback_headings,
        )?)
    }

    pub fn chat_provider(&self) -> Arc<dyn ChatProvider> {
        match self.llm.provider {
            LlmKind::Fixture => Arc::new(FixtureAnalyst::new()),
            LlmKind::Remote => Arc::new(RemoteChat::from_env(
                self.llm.base_url.as_deref().unwrap_or_default(),
                self.llm.model.as_deref().unwrap_or_default(),
                self.llm.retry,
            )),
        }
    }

    pub fn embedding_provider(&self) -> Arc<dyn EmbeddingProvider> {
        let e = &self.embeddings;
        match e.provider {
            EmbeddingKind::Local => Arc::new(HashedBagOfWords::new(e.dimension)),
            EmbeddingKind::Remote => Arc::new(RemoteEmbeddings::from_env(
                e.base_url.as_deref().unwrap_or_default(),
                e.model.as_deref().unwrap_or_default(),
                e.dimension,
                e.retry,
            )),
        }
    }

    /// Metadata a fresh index is created with.
    pub fn index_meta(&self, provider: &dyn EmbeddingProvider) -> IndexMeta {
        IndexMeta::new(provider.dimension(), self.embeddings.metric, provider.name())
    }
}
