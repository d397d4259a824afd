//! Router workflow: domain check, concurrent document retrieval and SQL,
//! grounded prompt, answer, optional chart.

mod chart;
pub mod prompt;
mod session;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chart::{decide_chart, ChartKind, ChartSpec, MAX_CHART_ROWS, MIN_CHART_ROWS};
pub use prompt::{build_prompt, ContextOverflow, PromptBundle, RenderedPrompt, SqlContext};
pub use session::{ChatSession, Role, SessionError, SessionStore, SharedSession, Turn, UnknownRole};

use crate::cms::{cell_text, CmsError, CmsStore, SchemaDescription, Table};
use crate::index::{embed, rank_order, EmbeddingProvider, MetadataFilter, RetrievalResult, VectorIndex, DEFAULT_K};
use crate::llm::{ChatProvider, LlmError};
use crate::ocs;
use crate::sql_agent::{self, AuditLog, SqlAgentConfig, SqlAgentError, ValidationVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    InDomain,
    OutOfDomain,
}

/// Reads the router's IN/OUT reply. Anything unreadable counts as in-domain:
/// the grounded path cannot say more than its sources.
pub fn parse_domain(reply: &str) -> Domain {
    let token: String = reply
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    if token == "OUT" {
        Domain::OutOfDomain
    } else {
        Domain::InDomain
    }
}

pub async fn classify_domain(question: &str, llm: &dyn ChatProvider) -> Result<Domain, LlmError> {
    let reply = llm.complete(&prompt::classification_prompt(question)).await?;
    Ok(parse_domain(&reply))
}

/// Filter for the first OCS id in the question, or the empty filter.
pub fn derive_filter(question: &str) -> MetadataFilter {
    ocs::distinct(question)
        .into_iter()
        .next()
        .map(MetadataFilter::contract)
        .unwrap_or_default()
}

/// One filter per distinct OCS id (one retrieval pass each), or a single
/// empty filter when the question names none.
pub fn derive_filters(question: &str) -> Vec<MetadataFilter> {
    let ids = ocs::distinct(question);
    if ids.is_empty() {
        vec![MetadataFilter::default()]
    } else {
        ids.into_iter().map(MetadataFilter::contract).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub text: String,
    pub cited_contracts: Vec<String>,
    /// Ids of the chunks placed in the prompt.
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartSpec>,
    pub out_of_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub k: usize,
    pub expand_neighbors: bool,
    /// History turns placed in the prompt.
    pub history_turns: usize,
    pub agent_timeout_ms: u64,
    pub context_budget_chars: usize,
    pub max_rows: usize,
    pub sql_timeout_ms: u64,
    pub sql_enabled: bool,
    pub rag_enabled: bool,
    /// Ask the LLM for document-language search terms before retrieval.
    pub rewrite_query: bool,
    /// Run the two agents concurrently; sequential mode exists for tests.
    pub concurrent: bool,
    /// Overrides of the built-in role contexts.
    pub role_contexts: BTreeMap<Role, String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let sql = SqlAgentConfig::default();
        Self {
            k: DEFAULT_K,
            expand_neighbors: true,
            history_turns: 6,
            agent_timeout_ms: 30_000,
            context_budget_chars: 24_000,
            max_rows: sql.max_rows,
            sql_timeout_ms: sql.timeout_ms,
            sql_enabled: true,
            rag_enabled: true,
            rewrite_query: true,
            concurrent: true,
            role_contexts: BTreeMap::new(),
        }
    }
}

impl EngineConfig {
    pub fn role_context(&self, role: Role) -> &str {
        self.role_contexts
            .get(&role)
            .map_or(role.default_context(), String::as_str)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("{0}; retry in a moment")]
    LlmUnavailable(LlmError),
    #[error(transparent)]
    ContextOverflow(#[from] ContextOverflow),
    /// The generated SQL was rejected and no document excerpts were found,
    /// so no grounded source remained.
    #[error("generated SQL rejected: {}", verdict.detail.as_deref().unwrap_or("invalid"))]
    ValidationFailed { sql: String, verdict: ValidationVerdict },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Database(#[from] CmsError),
}

impl From<LlmError> for EngineError {
    fn from(e: LlmError) -> Self {
        EngineError::LlmUnavailable(e)
    }
}

/// Everything the engine needs; `db` may be absent (documents only).
pub struct EngineParts {
    pub index: Arc<VectorIndex>,
    pub db: Option<Arc<CmsStore>>,
    pub llm: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub config: EngineConfig,
    pub audit: Option<AuditLog>,
}

struct Inner {
    index: Arc<VectorIndex>,
    db: Option<Arc<CmsStore>>,
    schema: RwLock<Option<SchemaDescription>>,
    llm: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    config: EngineConfig,
    audit: Option<AuditLog>,
}

/// Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

enum SqlResult {
    Skipped,
    Ok { sql: String, table: Table },
    Rejected { sql: String, verdict: ValidationVerdict },
    Failed(String),
}

impl Engine {
    /// Builds the engine and reads the database schema once.
    pub fn new(parts: EngineParts) -> Result<Self, EngineError> {
        let schema = match &parts.db {
            Some(db) => Some(db.introspect_schema()?),
            None => None,
        };
        Ok(Self {
            inner: Arc::new(Inner {
                index: parts.index,
                db: parts.db,
                schema: RwLock::new(schema),
                llm: parts.llm,
                embedder: parts.embedder,
                config: parts.config,
                audit: parts.audit,
            }),
        })
    }

    pub fn index(&self) -> &Arc<VectorIndex> {
        &self.inner.index
    }

    pub fn db(&self) -> Option<&Arc<CmsStore>> {
        self.inner.db.as_ref()
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.inner.embedder
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.config
    }

    /// Re-reads the database schema, e.g. after reseeding.
    pub fn refresh_schema(&self) -> Result<(), EngineError> {
        if let Some(db) = &self.inner.db {
            *self.inner.schema.write() = Some(db.introspect_schema()?);
        }
        Ok(())
    }

    /// Answers within a stored session and appends the turn. Turns of one
    /// session are serialized by the session lock.
    pub async fn ask(
        &self,
        store: &SessionStore,
        session_id: &str,
        question: &str,
    ) -> Result<AgentAnswer, EngineError> {
        let shared = store.get(session_id)?;
        let mut session = shared.lock().await;
        let answer = self.answer(&session, question).await?;
        store.record_turn(
            &mut session,
            Turn {
                question: question.to_owned(),
                answer: answer.text.clone(),
            },
        )?;
        Ok(answer)
    }

    /// Answers one question in the context of `session` without mutating it.
    pub async fn answer(&self, session: &ChatSession, question: &str) -> Result<AgentAnswer, EngineError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(EngineError::EmptyQuestion);
        }
        let cfg = &self.inner.config;
        let llm = self.inner.llm.as_ref();
        let role_context = cfg.role_context(session.role);

        if classify_domain(question, llm).await? == Domain::OutOfDomain {
            let text = llm.complete(&prompt::refusal_prompt(role_context, question)).await?;
            return Ok(AgentAnswer {
                text,
                cited_contracts: Vec::new(),
                sources: Vec::new(),
                table: None,
                chart: None,
                out_of_domain: true,
            });
        }

        let (rag, sql) = if cfg.concurrent {
            tokio::join!(self.rag_agent(question), self.sql_agent(question))
        } else {
            let rag = self.rag_agent(question).await;
            (rag, self.sql_agent(question).await)
        };

        let mut bundle = PromptBundle::new(role_context, question);
        bundle.history_window = session.window(cfg.history_turns).to_vec();
        match rag {
            Ok(chunks) => bundle.retrieved_chunks = chunks,
            Err(note) => bundle.notes.push(note),
        }
        let mut table = None;
        match sql {
            SqlResult::Skipped => {}
            SqlResult::Ok { sql, table: t } => {
                bundle.sql = Some(SqlContext { sql, table: t.clone() });
                table = Some(t);
            }
            SqlResult::Rejected { sql, verdict } => {
                if bundle.retrieved_chunks.is_empty() {
                    return Err(EngineError::ValidationFailed { sql, verdict });
                }
                bundle.notes.push(format!(
                    "the contract database was not consulted because the generated query was rejected ({})",
                    verdict.detail.as_deref().unwrap_or("invalid")
                ));
            }
            SqlResult::Failed(reason) => bundle
                .notes
                .push(format!("the contract database could not be consulted: {reason}")),
        }

        let rendered = build_prompt(&bundle, cfg.context_budget_chars)?;
        let text = llm.complete(&rendered.messages).await?;

        let grounded = grounded_ids(&bundle);
        let cited_contracts = ocs::distinct(&text)
            .into_iter()
            .filter(|id| grounded.contains(id))
            .collect();
        let table = table.filter(|t| !t.is_empty());
        let chart = table.as_ref().and_then(decide_chart);
        Ok(AgentAnswer {
            text,
            cited_contracts,
            sources: rendered.included_chunks,
            table,
            chart,
            out_of_domain: false,
        })
    }

    async fn rag_agent(&self, question: &str) -> Result<Vec<RetrievalResult>, String> {
        let cfg = &self.inner.config;
        if !cfg.rag_enabled {
            return Err("document search is disabled".into());
        }
        let work = async {
            let search_text = self.search_text(question).await;
            let vector = embed(&search_text, self.inner.embedder.as_ref())
                .await
                .map_err(|e| format!("document search unavailable: {e}"))?;
            let mut merged: HashMap<String, RetrievalResult> = HashMap::new();
            for filter in derive_filters(question) {
                let hits = self
                    .inner
                    .index
                    .query(&vector, &filter, cfg.k, cfg.expand_neighbors)
                    .map_err(|e| format!("document search failed: {e}"))?;
                for hit in hits {
                    match merged.get(&hit.chunk.id) {
                        Some(prev) if prev.score >= hit.score => {}
                        _ => {
                            merged.insert(hit.chunk.id.clone(), hit);
                        }
                    }
                }
            }
            let mut out: Vec<RetrievalResult> = merged.into_values().collect();
            out.sort_by(|a, b| rank_order((&a.chunk.id, a.score), (&b.chunk.id, b.score)));
            Ok(out)
        };
        with_timeout(cfg.agent_timeout_ms, "document search", work).await?
    }

    /// Question plus LLM search terms; the bare question when rewriting is
    /// off or fails.
    async fn search_text(&self, question: &str) -> String {
        if !self.inner.config.rewrite_query {
            return question.to_owned();
        }
        match self.inner.llm.complete(&prompt::search_query_prompt(question)).await {
            Ok(terms) if !terms.trim().is_empty() => format!("{question}\n{}", terms.trim()),
            Ok(_) => question.to_owned(),
            Err(e) => {
                tracing::warn!(error = %e, "search query rewrite failed; using the question");
                question.to_owned()
            }
        }
    }

    async fn sql_agent(&self, question: &str) -> SqlResult {
        let cfg = &self.inner.config;
        let Some(db) = self.inner.db.as_ref().filter(|_| cfg.sql_enabled) else {
            return SqlResult::Skipped;
        };
        let Some(schema) = self.inner.schema.read().clone() else {
            return SqlResult::Skipped;
        };
        let agent_cfg = SqlAgentConfig {
            max_rows: cfg.max_rows,
            timeout_ms: cfg.sql_timeout_ms,
        };
        let run = sql_agent::run(
            question,
            &schema,
            self.inner.llm.as_ref(),
            db,
            agent_cfg,
            self.inner.audit.as_ref(),
        );
        match with_timeout(cfg.agent_timeout_ms, "database query", run).await {
            Err(note) => SqlResult::Failed(note),
            Ok(Ok(outcome)) => SqlResult::Ok {
                sql: outcome.candidate.sql,
                table: outcome.table,
            },
            Ok(Err(SqlAgentError::ValidationFailed { candidate, verdict })) => SqlResult::Rejected {
                sql: candidate.sql,
                verdict,
            },
            Ok(Err(SqlAgentError::LlmRefusal { .. })) => SqlResult::Skipped,
            Ok(Err(e)) => SqlResult::Failed(e.to_string()),
        }
    }
}

async fn with_timeout<T>(ms: u64, what: &str, fut: impl Future<Output = T>) -> Result<T, String> {
    tokio::time::timeout(Duration::from_millis(ms), fut)
        .await
        .map_err(|_| format!("{what} timed out after {ms} ms"))
}

/// Contract ids present in the bundle's sources: chunk metadata and any id
/// appearing in a table cell.
fn grounded_ids(bundle: &PromptBundle) -> BTreeSet<String> {
    let mut ids: BTreeSet<String> = bundle
        .retrieved_chunks
        .iter()
        .map(|r| r.chunk.metadata.contract.clone())
        .filter(|c| !c.is_empty())
        .collect();
    if let Some(ctx) = &bundle.sql {
        for cell in ctx.table.rows.iter().flatten() {
            ids.extend(ocs::distinct(&cell_text(cell)));
        }
    }
    ids
}
