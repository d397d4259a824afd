//! Prompt assembly. Every prompt the orchestrator sends is built here so the
//! wording stays in one place and rendering stays deterministic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::session::{Role, Turn};
use crate::cms::Table;
use crate::index::RetrievalResult;
use crate::llm::ChatMessage;

pub const GROUNDING_RULE: &str = "Do not use prior knowledge.";
pub const OCS_CITATION_RULE: &str = "Whenever you answer a question about a contract, provide the OCS number.";
pub const TONE_RULE: &str = "You should use a formal and objective tone.";
pub const HISTORY_RULE: &str = "Given the chat history and the question asked, construct the response completely, without the user needing to review the history";
pub const SOURCES_RULE: &str =
    "Answer only from the contract excerpts and the database result below. If they do not hold the answer, say that the information was not found.";
pub const CONFLICT_RULE: &str =
    "When the contract excerpts and the database result disagree on a number or a date, use the database result.";

/// Instructions present in every grounded answer prompt, in order.
pub fn default_instructions() -> Vec<String> {
    [
        GROUNDING_RULE,
        OCS_CITATION_RULE,
        TONE_RULE,
        HISTORY_RULE,
        SOURCES_RULE,
        CONFLICT_RULE,
    ]
    .into_iter()
    .map(str::to_owned)
    .collect()
}

pub const CLASSIFY_MARKER: &str = "Answer with exactly one token: IN or OUT.";
pub const REFUSAL_MARKER: &str = "Politely decline any question outside the domain of administrative contracts";
pub const EXCERPTS_HEADER: &str = "CONTRACT EXCERPTS";
pub const TABLE_HEADER: &str = "DATABASE RESULT";
pub const QUESTION_PREFIX: &str = "QUESTION: ";
pub const BLOCK_END: &str = "<<end>>";
pub const SEARCH_MARKER: &str = "Rewrite the question as a search query for the contract documents";

pub fn classification_prompt(question: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(format!(
            "You route questions for an assistant that answers questions about an organization's administrative contracts: \
             their object, suppliers, managers, terms, values, clauses, amendments and procurement modes.\n\
             Decide whether the user's question belongs to that domain. {CLASSIFY_MARKER}"
        )),
        ChatMessage::user(question.to_owned()),
    ]
}

pub fn refusal_prompt(system_context: &str, question: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(format!(
            "{system_context}\n{REFUSAL_MARKER} and briefly state that you can help with questions about the organization's contracts. {TONE_RULE}"
        )),
        ChatMessage::user(question.to_owned()),
    ]
}

/// Asks for retrieval keywords in the documents' own language and clause
/// vocabulary; the reply is embedded together with the question.
pub fn search_query_prompt(question: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(format!(
            "{SEARCH_MARKER}. The documents are written in Portuguese and divided into numbered clauses \
             (CLÁUSULA PRIMEIRA - OBJETO, PRAZO DE VIGÊNCIA, PREÇO, PAGAMENTO, GESTÃO E FISCALIZAÇÃO, PENALIDADES, RESCISÃO). \
             Use the vocabulary of those documents, keep names and contract numbers unchanged, and reply with the keywords only."
        )),
        ChatMessage::user(format!("{QUESTION_PREFIX}{question}")),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlContext {
    pub sql: String,
    pub table: Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_context: String,
    pub instructions: Vec<String>,
    /// Rank order, best first.
    pub retrieved_chunks: Vec<RetrievalResult>,
    pub sql: Option<SqlContext>,
    /// Sources that could not be consulted, with the reason.
    pub notes: Vec<String>,
    pub history_window: Vec<Turn>,
    pub question: String,
}

impl PromptBundle {
    pub fn new(role_context: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            system_context: role_context.into(),
            instructions: default_instructions(),
            retrieved_chunks: Vec::new(),
            sql: None,
            notes: Vec::new(),
            history_window: Vec::new(),
            question: question.into(),
        }
    }

    pub fn for_role(role: Role, question: impl Into<String>) -> Self {
        Self::new(role.default_context(), question)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("question of {question_chars} characters exceeds the context budget of {budget} characters")]
pub struct ContextOverflow {
    pub question_chars: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    /// Chunk ids that made it into the prompt, in rank order.
    pub included_chunks: Vec<String>,
    pub dropped_chunks: usize,
    pub dropped_turns: usize,
    pub dropped_rows: usize,
}

impl RenderedPrompt {
    pub fn chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

/// Renders the bundle into provider messages within `budget` characters.
/// Over budget, content is shed in this order: lowest-score chunks, oldest
/// history turns, trailing table rows. Each cut is noted in the prompt.
pub fn build_prompt(bundle: &PromptBundle, budget: usize) -> Result<RenderedPrompt, ContextOverflow> {
    let question_chars = bundle.question.chars().count();
    if question_chars > budget {
        return Err(ContextOverflow { question_chars, budget });
    }
    let mut chunks = bundle.retrieved_chunks.len();
    let mut turns_from = 0;
    let mut rows = bundle.sql.as_ref().map_or(0, |s| s.table.rows.len());
    loop {
        let prompt = render(bundle, chunks, turns_from, rows);
        if prompt.chars() <= budget {
            return Ok(prompt);
        }
        if chunks > 0 {
            chunks -= 1;
        } else if turns_from < bundle.history_window.len() {
            turns_from += 1;
        } else if rows > 0 {
            rows -= 1;
        } else {
            // nothing left to shed; fixed framing may still exceed a tiny budget
            return Ok(prompt);
        }
    }
}

fn render(bundle: &PromptBundle, chunks: usize, turns_from: usize, rows: usize) -> RenderedPrompt {
    let mut system = bundle.system_context.clone();
    system.push_str("\n\nInstructions:");
    for i in &bundle.instructions {
        let _ = write!(system, "\n- {i}");
    }
    let mut messages = vec![ChatMessage::system(system)];
    for turn in &bundle.history_window[turns_from..] {
        messages.push(ChatMessage::user(turn.question.clone()));
        messages.push(ChatMessage::assistant(turn.answer.clone()));
    }

    let mut body = String::new();
    if turns_from > 0 {
        let _ = writeln!(
            body,
            "({turns_from} older conversation turn(s) omitted to fit the context budget)\n"
        );
    }
    body.push_str(EXCERPTS_HEADER);
    body.push('\n');
    let included: Vec<&RetrievalResult> = bundle.retrieved_chunks.iter().take(chunks).collect();
    if bundle.retrieved_chunks.is_empty() {
        body.push_str("(none retrieved)\n");
    }
    for r in &included {
        let _ = writeln!(
            body,
            "<<chunk {} | score {:.4}>>\n{}\n{BLOCK_END}",
            r.chunk.id, r.score, r.chunk.text
        );
    }
    let dropped_chunks = bundle.retrieved_chunks.len() - included.len();
    if dropped_chunks > 0 {
        let _ = writeln!(
            body,
            "({dropped_chunks} lower-scoring excerpt(s) omitted to fit the context budget)"
        );
    }

    body.push('\n');
    body.push_str(TABLE_HEADER);
    body.push('\n');
    let mut dropped_rows = 0;
    match &bundle.sql {
        Some(ctx) => {
            let mut table = ctx.table.clone();
            dropped_rows = table.rows.len() - rows.min(table.rows.len());
            table.rows.truncate(rows);
            let _ = writeln!(body, "SQL: {}", ctx.sql);
            body.push_str(&table.render());
            body.push('\n');
            if table.rows.is_empty() && dropped_rows == 0 {
                body.push_str("(no rows)\n");
            }
            if dropped_rows > 0 {
                let _ = writeln!(body, "({dropped_rows} row(s) omitted to fit the context budget)");
            }
            body.push_str(BLOCK_END);
            body.push('\n');
        }
        None => body.push_str("(none)\n"),
    }
    for note in &bundle.notes {
        let _ = writeln!(body, "Note: {note}");
    }
    let _ = write!(body, "\n{QUESTION_PREFIX}{}", bundle.question);
    messages.push(ChatMessage::user(body));

    RenderedPrompt {
        messages,
        included_chunks: included.iter().map(|r| r.chunk.id.clone()).collect(),
        dropped_chunks,
        dropped_turns: turns_from,
        dropped_rows,
    }
}
