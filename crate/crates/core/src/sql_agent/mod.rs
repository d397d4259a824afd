//! Natural-language question to validated read-only SQL, executed against
//! the contract database.

mod validate;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use validate::{is_forbidden_function, validate_sql, ValidationVerdict, Violation};

use crate::cms::{CmsError, CmsStore, SchemaDescription, Table, DEFAULT_MAX_ROWS, DEFAULT_TIMEOUT_MS};
use crate::llm::{ChatMessage, ChatProvider, LlmError};

/// Marks SQL-generation prompts.
pub const SQL_TASK_MARKER: &str = "Write exactly one SQLite SELECT statement";
/// Marks repair prompts sent after an execution error.
pub const SQL_REPAIR_MARKER: &str = "The previous statement failed";
/// Reply an LLM gives when the schema cannot answer the question.
pub const NO_SQL: &str = "NO_SQL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMapping {
    pub mention: String,
    /// `table.column`
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub question: String,
    pub sql: String,
    pub entities: Vec<EntityMapping>,
    /// 1 for the first generation, 2 after a repair round.
    pub attempt: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlOutcome {
    pub table: Table,
    pub candidate: SqlCandidate,
}

#[derive(Debug, Error)]
pub enum SqlAgentError {
    #[error("language model produced no SQL statement")]
    LlmRefusal { reply: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("generated SQL rejected: {}", verdict.detail.as_deref().unwrap_or("invalid"))]
    ValidationFailed {
        candidate: SqlCandidate,
        verdict: ValidationVerdict,
    },
    #[error("generated SQL failed: {error}")]
    Execution { candidate: SqlCandidate, error: CmsError },
    #[error("database schema is empty")]
    EmptySchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlAgentConfig {
    pub max_rows: usize,
    pub timeout_ms: u64,
}

impl Default for SqlAgentConfig {
    fn default() -> Self {
        Self {
            max_rows: DEFAULT_MAX_ROWS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

fn generation_prompt(question: &str, schema: &SchemaDescription) -> Vec<ChatMessage> {
    let system = format!(
        "You translate questions about administrative contracts into SQL for a SQLite contract-management database.\n\
         {SQL_TASK_MARKER} that answers the question, using only the tables and columns in the schema.\n\
         First list each entity you recognized in the question on its own line as `ENTITY: <mention> -> <table>.<column>`.\n\
         Then give the statement in a ```sql code block. Never write statements that modify data.\n\
         Monetary columns ending in _cents hold integer cents. Dates are ISO yyyy-mm-dd text.\n\
         If the schema cannot answer the question, reply {NO_SQL}."
    );
    let user = format!("Schema:\n{}\n\nQuestion: {question}", schema.rendered_text);
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

fn repair_prompt(question: &str, schema: &SchemaDescription, failed: &str, error: &str) -> Vec<ChatMessage> {
    let mut messages = generation_prompt(question, schema);
    messages.push(ChatMessage::assistant(format!("```sql\n{failed}\n```")));
    messages.push(ChatMessage::user(format!(
        "{SQL_REPAIR_MARKER} with this database error:\n{error}\n\
         Failed statement:\n{failed}\n\
         Return a corrected statement in the same format."
    )));
    messages
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[ \t]*(?:sql|sqlite)?[ \t]*\r?\n(.*?)```").expect("static regex"));
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*ENTITY:\s*(.+?)\s*->\s*(\S+)\s*$").expect("static regex"));
static STATEMENT_START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(SELECT|WITH)\b").expect("static regex"));

/// Pulls the statement out of an LLM reply: the first fenced block, else the
/// first line opening with SELECT/WITH up to the next blank line. Trailing
/// semicolons are removed.
pub fn extract_sql(reply: &str) -> Option<String> {
    let raw = if let Some(c) = FENCE.captures(reply) {
        c.get(1).map(|m| m.as_str().to_owned())
    } else {
        let lines: Vec<&str> = reply.lines().collect();
        lines.iter().position(|l| STATEMENT_START.is_match(l)).map(|start| {
            lines[start..]
                .iter()
                .take_while(|l| !l.trim().is_empty())
                .copied()
                .collect::<Vec<_>>()
                .join("\n")
        })
    }?;
    let sql = raw
        .trim()
        .trim_end_matches(|c: char| c == ';' || c.is_whitespace())
        .trim();
    (!sql.is_empty()).then(|| sql.to_owned())
}

pub fn extract_entities(reply: &str) -> Vec<EntityMapping> {
    ENTITY
        .captures_iter(reply)
        .map(|c| EntityMapping {
            mention: c[1].to_owned(),
            target: c[2].to_owned(),
        })
        .collect()
}

#[allow(clippy::result_large_err)]
fn candidate_from(question: &str, reply: &str, attempt: u8) -> Result<SqlCandidate, SqlAgentError> {
    let sql = extract_sql(reply).ok_or_else(|| SqlAgentError::LlmRefusal {
        reply: reply.to_owned(),
    })?;
    Ok(SqlCandidate {
        question: question.to_owned(),
        sql,
        entities: extract_entities(reply),
        attempt,
    })
}

pub async fn generate_sql(
    question: &str,
    schema: &SchemaDescription,
    llm: &dyn ChatProvider,
) -> Result<SqlCandidate, SqlAgentError> {
    if schema.is_empty() {
        return Err(SqlAgentError::EmptySchema);
    }
    let reply = llm.complete(&generation_prompt(question, schema)).await?;
    candidate_from(question, &reply, 1)
}

/// JSON-lines audit trail, one line per agent run.
pub struct AuditLog {
    file: Mutex<File>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub question: String,
    pub sql: Option<String>,
    pub verdict: Option<ValidationVerdict>,
    pub row_count: Option<usize>,
    pub attempt: u8,
    pub outcome: String,
    pub entities: Vec<EntityMapping>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            file: Mutex::new(OpenOptions::new().create(true).append(true).open(path)?),
        })
    }

    pub fn record(&self, rec: &AuditRecord) {
        let mut line = serde_json::to_string(rec).expect("audit record serializes");
        line.push('\n');
        if let Err(e) = self.file.lock().write_all(line.as_bytes()) {
            tracing::warn!(error = %e, "audit log write failed");
        }
    }
}

async fn execute(db: &Arc<CmsStore>, sql: &str, cfg: SqlAgentConfig) -> Result<Table, CmsError> {
    let db = Arc::clone(db);
    let sql = sql.to_owned();
    tokio::task::spawn_blocking(move || db.execute_readonly(&sql, cfg.max_rows, cfg.timeout_ms))
        .await
        .unwrap_or_else(|e| Err(CmsError::SqlExecution(format!("executor task failed: {e}"))))
}

/// Generate, validate and execute; one repair round on execution errors.
pub async fn run(
    question: &str,
    schema: &SchemaDescription,
    llm: &dyn ChatProvider,
    db: &Arc<CmsStore>,
    cfg: SqlAgentConfig,
    audit: Option<&AuditLog>,
) -> Result<SqlOutcome, SqlAgentError> {
    let result = run_inner(question, schema, llm, db, cfg).await;
    if let Some(log) = audit {
        log.record(&audit_record(question, &result));
    }
    result
}

async fn run_inner(
    question: &str,
    schema: &SchemaDescription,
    llm: &dyn ChatProvider,
    db: &Arc<CmsStore>,
    cfg: SqlAgentConfig,
) -> Result<SqlOutcome, SqlAgentError> {
    let mut candidate = generate_sql(question, schema, llm).await?;
    loop {
        let verdict = validate_sql(&candidate.sql);
        if !verdict.ok {
            return Err(SqlAgentError::ValidationFailed { candidate, verdict });
        }
        match execute(db, &candidate.sql, cfg).await {
            Ok(table) => return Ok(SqlOutcome { table, candidate }),
            Err(CmsError::SqlExecution(msg)) if candidate.attempt < 2 => {
                tracing::debug!(sql = %candidate.sql, error = %msg, "repairing failed statement");
                let reply = llm
                    .complete(&repair_prompt(question, schema, &candidate.sql, &msg))
                    .await?;
                candidate = candidate_from(question, &reply, 2)?;
            }
            Err(error) => return Err(SqlAgentError::Execution { candidate, error }),
        }
    }
}

fn audit_record(question: &str, result: &Result<SqlOutcome, SqlAgentError>) -> AuditRecord {
    let mut rec = AuditRecord {
        question: question.to_owned(),
        sql: None,
        verdict: None,
        row_count: None,
        attempt: 1,
        outcome: String::new(),
        entities: Vec::new(),
    };
    match result {
        Ok(o) => {
            rec.sql = Some(o.candidate.sql.clone());
            rec.verdict = Some(validate_sql(&o.candidate.sql));
            rec.row_count = Some(o.table.rows.len());
            rec.attempt = o.candidate.attempt;
            rec.entities = o.candidate.entities.clone();
            rec.outcome = "ok".into();
        }
        Err(SqlAgentError::ValidationFailed { candidate, verdict }) => {
            rec.sql = Some(candidate.sql.clone());
            rec.verdict = Some(verdict.clone());
            rec.attempt = candidate.attempt;
            rec.outcome = "validation_failed".into();
        }
        Err(SqlAgentError::Execution { candidate, error }) => {
            rec.sql = Some(candidate.sql.clone());
            rec.attempt = candidate.attempt;
            rec.outcome = format!("execution_error: {error}");
        }
        Err(other) => rec.outcome = other.to_string(),
    }
    rec
}
