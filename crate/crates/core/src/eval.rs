//! Benchmark runner: direct and indirect question templates, automatic
//! judging against oracle values, and a tabular report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cms::{cell_text, CmsError, CmsStore};
use crate::orchestrator::{Engine, EngineError, Role, SessionStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Direct,
    Indirect,
}

/// Value substituted for a placeholder. When `column` (`table.column`) is
/// given, the value must exist there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Expectation {
    /// Case-insensitive substring.
    Substring {
        value: String,
    },
    Regex {
        pattern: String,
    },
    /// The answer states the single number the query returns.
    NumericSql {
        sql: String,
    },
    /// The answer mentions every value the query returns; each value is
    /// judged separately.
    ValuesSql {
        sql: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub id: String,
    pub kind: QuestionKind,
    /// Question wording with placeholders such as `nnn/yy` or `xxxx`.
    pub template: String,
    #[serde(default)]
    pub bindings: BTreeMap<String, Binding>,
    pub expected: Vec<Expectation>,
}

impl BenchmarkQuestion {
    /// Template with placeholders replaced, longest placeholder first.
    pub fn text(&self) -> String {
        let mut keys: Vec<&String> = self.bindings.keys().collect();
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        let mut out = self.template.clone();
        for k in keys {
            out = out.replace(k.as_str(), &self.bindings[k].value);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub questions: Vec<BenchmarkQuestion>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read benchmark {path}: {message}")]
    Read { path: String, message: String },
    #[error("question {id}: {message}")]
    InvalidQuestion { id: String, message: String },
    #[error("question {id}: oracle query failed: {error}")]
    Oracle { id: String, error: CmsError },
    #[error("answering engine unreachable: {0}")]
    EngineUnreachable(String),
    #[error("answering failed: {0}")]
    Answer(String),
}

pub fn load_benchmark(path: &Path) -> Result<BenchmarkFile, EvalError> {
    let read_err = |message: String| EvalError::Read {
        path: path.display().to_string(),
        message,
    };
    let raw = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    serde_json::from_str(&raw).map_err(|e| read_err(e.to_string()))
}

/// An expectation with its oracle values resolved.
#[derive(Debug, Clone)]
enum Check {
    Substring(String),
    Regex(String, Regex),
    Number(String, f64),
    Value(String),
}

impl PartialEq for Check {
    fn eq(&self, other: &Self) -> bool {
        self.label() == other.label()
    }
}

impl Check {
    fn label(&self) -> String {
        match self {
            Check::Substring(s) => format!("mentions {s:?}"),
            Check::Regex(p, _) => format!("matches /{p}/"),
            Check::Number(sql, n) => format!("states {n} ({sql})"),
            Check::Value(v) => format!("mentions {v:?}"),
        }
    }

    fn passes(&self, answer: &str) -> bool {
        match self {
            Check::Substring(s) | Check::Value(s) => answer.to_lowercase().contains(&s.to_lowercase()),
            Check::Regex(_, re) => re.is_match(answer),
            Check::Number(_, n) => standalone_numbers(answer).iter().any(|x| (x - n).abs() < 1e-6),
        }
    }
}

/// Numbers that stand alone in the text: not part of an `nnn/yyyy` id, a
/// date, or a longer digit run.
pub fn standalone_numbers(text: &str) -> Vec<f64> {
    static NUM: std::sync::LazyLock<Regex> =
        std::sync::LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").expect("static regex"));
    let bytes = text.as_bytes();
    NUM.find_iter(text)
        .filter(|m| {
            let before = m.start().checked_sub(1).map(|i| bytes[i]);
            let after = bytes.get(m.end()).copied();
            let glued_before = before.is_some_and(|b| b.is_ascii_digit() || matches!(b, b'/' | b'-' | b'.' | b','));
            let glued_after = after.is_some_and(|b| b.is_ascii_digit() || matches!(b, b'/' | b'-'))
                || (after == Some(b',') && bytes.get(m.end() + 1).is_some_and(u8::is_ascii_digit));
            !glued_before && !glued_after
        })
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreparedQuestion {
    pub question: BenchmarkQuestion,
    pub text: String,
    checks: Vec<Check>,
}

impl PreparedQuestion {
    pub fn check_labels(&self) -> Vec<String> {
        self.checks.iter().map(Check::label).collect()
    }

    pub fn judge(&self, answer: &str) -> Judgment {
        let mut matched = Vec::new();
        let mut missing = Vec::new();
        for c in &self.checks {
            if c.passes(answer) {
                matched.push(c.label());
            } else {
                missing.push(c.label());
            }
        }
        let verdict = match (matched.is_empty(), missing.is_empty()) {
            (_, true) => Verdict::Correct,
            (true, false) => Verdict::Incorrect,
            (false, false) => Verdict::Incomplete,
        };
        Judgment {
            question_id: self.question.id.clone(),
            verdict,
            matched,
            missing,
        }
    }
}

/// Validates bindings against the database and resolves oracle queries.
pub fn prepare(questions: &[BenchmarkQuestion], db: &CmsStore) -> Result<Vec<PreparedQuestion>, EvalError> {
    questions.iter().map(|q| prepare_one(q, db)).collect()
}

fn prepare_one(q: &BenchmarkQuestion, db: &CmsStore) -> Result<PreparedQuestion, EvalError> {
    let invalid = |message: String| EvalError::InvalidQuestion {
        id: q.id.clone(),
        message,
    };
    for (placeholder, b) in &q.bindings {
        if !q.template.contains(placeholder.as_str()) {
            return Err(invalid(format!("placeholder {placeholder:?} not in template")));
        }
        if let Some(col) = &b.column {
            let (table, column) = col
                .split_once('.')
                .ok_or_else(|| invalid(format!("binding column {col:?} is not table.column")))?;
            let exists = db
                .value_exists(table, column, &b.value)
                .map_err(|e| invalid(e.to_string()))?;
            if !exists {
                return Err(invalid(format!("{:?} not found in {col}", b.value)));
            }
        }
    }
    if q.expected.is_empty() {
        return Err(invalid("no expectations".into()));
    }
    let oracle = |sql: &str| {
        db.execute_readonly(sql, 10_000, 10_000)
            .map_err(|error| EvalError::Oracle {
                id: q.id.clone(),
                error,
            })
    };
    let mut checks = Vec::new();
    for e in &q.expected {
        match e {
            Expectation::Substring { value } => checks.push(Check::Substring(value.clone())),
            Expectation::Regex { pattern } => {
                let re = Regex::new(pattern).map_err(|e| invalid(format!("bad regex: {e}")))?;
                checks.push(Check::Regex(pattern.clone(), re));
            }
            Expectation::NumericSql { sql } => {
                let table = oracle(sql)?;
                let n = table
                    .scalar()
                    .and_then(Value::as_f64)
                    .ok_or_else(|| invalid(format!("oracle {sql:?} did not return one number")))?;
                checks.push(Check::Number(sql.clone(), n));
            }
            Expectation::ValuesSql { sql } => {
                let table = oracle(sql)?;
                if table.is_empty() {
                    return Err(invalid(format!("oracle {sql:?} returned no rows")));
                }
                for cell in table.rows.iter().flatten() {
                    let v = cell_text(cell);
                    if !checks.contains(&Check::Value(v.clone())) {
                        checks.push(Check::Value(v));
                    }
                }
            }
        }
    }
    Ok(PreparedQuestion {
        question: q.clone(),
        text: q.text(),
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Correct,
    Incomplete,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub question_id: String,
    pub verdict: Verdict,
    pub matched: Vec<String>,
    pub missing: Vec<String>,
}

/// Something that answers a question in a fresh session.
#[async_trait]
pub trait AnswerSource: Send + Sync {
    async fn fresh_answer(&self, question: &str) -> Result<String, EvalError>;
}

/// In-process engine; each call opens a new session.
pub struct EngineSource {
    pub engine: Engine,
    pub sessions: Arc<SessionStore>,
    pub role: Role,
}

#[async_trait]
impl AnswerSource for EngineSource {
    async fn fresh_answer(&self, question: &str) -> Result<String, EvalError> {
        let id = self
            .sessions
            .create(self.role)
            .map_err(|e| EvalError::Answer(e.to_string()))?;
        match self.engine.ask(&self.sessions, &id, question).await {
            Ok(a) => Ok(a.text),
            Err(e @ EngineError::LlmUnavailable(_)) => Err(EvalError::EngineUnreachable(e.to_string())),
            Err(e) => Err(EvalError::Answer(e.to_string())),
        }
    }
}

/// A running HTTP service.
pub struct HttpSource {
    client: reqwest::Client,
    base: String,
    role: Role,
    token: Option<String>,
}

impl HttpSource {
    pub fn new(base_url: &str, role: Role, token: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base: base_url.trim_end_matches('/').to_owned(),
            role,
            token,
        }
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, EvalError> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| EvalError::EngineUnreachable(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .await
            .map_err(|e| EvalError::Answer(format!("bad response body: {e}")))?;
        if !status.is_success() {
            return Err(EvalError::Answer(format!("{status}: {body}")));
        }
        Ok(body)
    }
}

#[async_trait]
impl AnswerSource for HttpSource {
    async fn fresh_answer(&self, question: &str) -> Result<String, EvalError> {
        let session = self.post("/sessions", json!({ "role": self.role })).await?;
        let id = session["session_id"]
            .as_str()
            .ok_or_else(|| EvalError::Answer("session response without session_id".into()))?;
        let answer = self
            .post(&format!("/sessions/{id}/ask"), json!({ "question": question }))
            .await?;
        answer["text"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| EvalError::Answer("answer response without text".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub kind: QuestionKind,
    pub question: String,
    pub asked: String,
    pub correct: usize,
    pub incomplete: usize,
    pub incorrect: usize,
    /// Judgment of the first trial, kept as evidence.
    pub sample: Judgment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub trials: usize,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// Questions whose every trial was judged Correct.
    pub fn fully_correct(&self) -> usize {
        self.rows.iter().filter(|r| r.correct == self.trials).count()
    }

    /// Markdown tables `| Question | Correct | Incomplete |`, direct then
    /// indirect, with `-` for zero counts.
    pub fn markdown(&self) -> String {
        let dash = |n: usize| if n == 0 { "-".to_owned() } else { n.to_string() };
        let mut out = String::new();
        let _ = writeln!(out, "# Benchmark report\n\nTrials per question: {}", self.trials);
        for (kind, title) in [
            (QuestionKind::Direct, "Direct questions"),
            (QuestionKind::Indirect, "Indirect questions"),
        ] {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.kind == kind).collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(
                out,
                "\n## {title}\n\n| Question | Correct | Incomplete |\n|---|---|---|"
            );
            for r in rows {
                let _ = writeln!(out, "| {} | {} | {} |", r.question, dash(r.correct), dash(r.incomplete));
            }
        }
        let incorrect: usize = self.rows.iter().map(|r| r.incorrect).sum();
        if incorrect > 0 {
            let _ = writeln!(out, "\nIncorrect verdicts: {incorrect}");
        }
        out
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Asks each question `trials` times, each in a fresh session.
pub async fn run_benchmark(
    questions: &[PreparedQuestion],
    source: &dyn AnswerSource,
    trials: usize,
) -> Result<Report, EvalError> {
    let mut rows = Vec::with_capacity(questions.len());
    for q in questions {
        let mut counts = [0usize; 3];
        let mut sample = None;
        for _ in 0..trials {
            let judgment = match source.fresh_answer(&q.text).await {
                Ok(answer) => q.judge(&answer),
                Err(e @ EvalError::EngineUnreachable(_)) => return Err(e),
                Err(e) => Judgment {
                    question_id: q.question.id.clone(),
                    verdict: Verdict::Incorrect,
                    matched: Vec::new(),
                    missing: vec![format!("no answer: {e}")],
                },
            };
            counts[judgment.verdict as usize] += 1;
            sample.get_or_insert(judgment);
        }
        rows.push(ReportRow {
            id: q.question.id.clone(),
            kind: q.question.kind,
            question: q.question.template.clone(),
            asked: q.text.clone(),
            correct: counts[0],
            incomplete: counts[1],
            incorrect: counts[2],
            sample: sample.unwrap_or_else(|| q.judge("")),
        });
    }
    Ok(Report { trials, rows })
}
