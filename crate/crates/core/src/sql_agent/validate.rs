//! Read-only statement validation.
//!
//! A statement passes only if it tokenizes to a single statement, parses to
//! a single query, and its syntax tree holds nothing that can write, attach,
//! change settings or reach the filesystem. A keyword scan over unquoted
//! words runs last as a backstop.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr, ObjectName, Query, SetExpr, Statement, TableFactor, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::keywords::Keyword;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, TokenWithSpan, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    NotSelect,
    MultiStatement,
    ForbiddenKeyword,
    ForbiddenConstruct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
    /// Human-readable reason for a rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ValidationVerdict {
    fn accept() -> Self {
        Self {
            ok: true,
            violation: None,
            detail: None,
        }
    }

    fn reject(violation: Violation, detail: impl Into<String>) -> Self {
        Self {
            ok: false,
            violation: Some(violation),
            detail: Some(detail.into()),
        }
    }
}

const FORBIDDEN_WORDS: &[&str] = &[
    "ALTER",
    "ANALYZE",
    "ATTACH",
    "BEGIN",
    "CALL",
    "COMMIT",
    "COPY",
    "CREATE",
    "DELETE",
    "DETACH",
    "DROP",
    "EXEC",
    "EXECUTE",
    "GRANT",
    "INSERT",
    "LOAD_EXTENSION",
    "MERGE",
    "PRAGMA",
    "REINDEX",
    "RELEASE",
    "REPLACE",
    "REVOKE",
    "ROLLBACK",
    "SAVEPOINT",
    "TRUNCATE",
    "UPDATE",
    "UPSERT",
    "VACUUM",
];

/// Functions with side effects or filesystem access in common SQLite builds.
const FORBIDDEN_FUNCTIONS: &[&str] = &[
    "load_extension",
    "writefile",
    "readfile",
    "edit",
    "fts3_tokenizer",
    "zipfile",
    "sqlar_compress",
    "sqlar_uncompress",
    "sqlite_dbpage",
    "sqlite_dbdata",
];

pub fn is_forbidden_function(name: &str) -> bool {
    let name = name.to_lowercase();
    FORBIDDEN_FUNCTIONS.contains(&name.as_str()) || name.starts_with("pragma_")
}

pub fn validate_sql(sql: &str) -> ValidationVerdict {
    if sql.trim().is_empty() {
        return ValidationVerdict::reject(Violation::NotSelect, "empty statement");
    }
    let dialect = SQLiteDialect {};
    let located = match Tokenizer::new(&dialect, sql).tokenize_with_location() {
        Ok(t) => t,
        Err(e) => return ValidationVerdict::reject(Violation::NotSelect, format!("tokenize: {e}")),
    };
    let tokens: Vec<Token> = located.iter().map(|t| t.token.clone()).collect();
    if has_second_statement(&tokens) {
        return ValidationVerdict::reject(Violation::MultiStatement, "more than one statement");
    }

    let statements = match Parser::parse_sql(&dialect, &parseable(sql, &located)) {
        Ok(s) => s,
        Err(e) => return ValidationVerdict::reject(Violation::NotSelect, format!("parse: {e}")),
    };
    let statement = match statements.as_slice() {
        [one] => one,
        [] => return ValidationVerdict::reject(Violation::NotSelect, "no statement"),
        _ => return ValidationVerdict::reject(Violation::MultiStatement, "more than one statement"),
    };
    let Statement::Query(query) = statement else {
        return ValidationVerdict::reject(Violation::NotSelect, "not a SELECT statement");
    };

    if let ControlFlow::Break(reason) = statement.visit(&mut ReadOnlyGuard) {
        return ValidationVerdict::reject(Violation::ForbiddenConstruct, reason);
    }
    if let Some(reason) = select_into(query) {
        return ValidationVerdict::reject(Violation::ForbiddenConstruct, reason);
    }
    if let Some(word) = forbidden_word(&tokens) {
        return ValidationVerdict::reject(Violation::ForbiddenKeyword, format!("forbidden keyword {word}"));
    }
    ValidationVerdict::accept()
}

/// The statement as the parser should see it: unquoted GLOB, which the
/// parser lacks, becomes LIKE, an operator of the same shape and length.
/// Validation only; the original text is what executes.
fn parseable(sql: &str, tokens: &[TokenWithSpan]) -> String {
    let line_starts: Vec<usize> = std::iter::once(0)
        .chain(sql.match_indices('\n').map(|(i, _)| i + 1))
        .collect();
    let mut out = sql.to_owned();
    for t in tokens {
        let Token::Word(w) = &t.token else { continue };
        if w.quote_style.is_some() || !w.value.eq_ignore_ascii_case("GLOB") {
            continue;
        }
        let start = t.span.start;
        let Some(&line) = line_starts.get((start.line as usize).saturating_sub(1)) else {
            continue;
        };
        let Some((col, _)) = sql[line..]
            .char_indices()
            .nth((start.column as usize).saturating_sub(1))
        else {
            continue;
        };
        let at = line + col;
        if out.get(at..at + 4).is_some_and(|g| g.eq_ignore_ascii_case("GLOB")) {
            out.replace_range(at..at + 4, "LIKE");
        }
    }
    out
}

fn is_trivia(t: &Token) -> bool {
    matches!(t, Token::Whitespace(_) | Token::EOF)
}

/// Any non-trivia token after a semicolon starts a second statement.
fn has_second_statement(tokens: &[Token]) -> bool {
    let mut after_semicolon = false;
    for t in tokens {
        match t {
            Token::SemiColon => after_semicolon = true,
            t if is_trivia(t) => {}
            _ if after_semicolon => return true,
            _ => {}
        }
    }
    false
}

fn forbidden_word(tokens: &[Token]) -> Option<String> {
    let significant: Vec<&Token> = tokens.iter().filter(|t| !is_trivia(t)).collect();
    for (i, t) in significant.iter().enumerate() {
        let Token::Word(w) = t else { continue };
        if w.quote_style.is_some() {
            continue;
        }
        let upper = w.value.to_uppercase();
        if !FORBIDDEN_WORDS.contains(&upper.as_str()) {
            continue;
        }
        // replace(x, a, b) is an ordinary string function
        if w.keyword == Keyword::REPLACE && matches!(significant.get(i + 1), Some(Token::LParen)) {
            continue;
        }
        return Some(upper);
    }
    None
}

fn select_into(query: &Query) -> Option<String> {
    fn walk(body: &SetExpr) -> Option<String> {
        match body {
            SetExpr::Select(s) if s.into.is_some() => Some("SELECT ... INTO".into()),
            SetExpr::Query(q) => walk(&q.body),
            SetExpr::SetOperation { left, right, .. } => walk(left).or_else(|| walk(right)),
            _ => None,
        }
    }
    walk(&query.body)
}

struct ReadOnlyGuard;

impl ReadOnlyGuard {
    fn check_name(name: &ObjectName) -> ControlFlow<String> {
        let last = name
            .0
            .last()
            .and_then(|p| p.as_ident())
            .map(|i| i.value.to_lowercase())
            .unwrap_or_default();
        if is_forbidden_function(&last) {
            return ControlFlow::Break(format!("forbidden function {last}"));
        }
        ControlFlow::Continue(())
    }
}

impl Visitor for ReadOnlyGuard {
    type Break = String;

    fn pre_visit_statement(&mut self, statement: &Statement) -> ControlFlow<String> {
        match statement {
            Statement::Query(_) => ControlFlow::Continue(()),
            other => {
                let text = other.to_string();
                let head = text.split_whitespace().next().unwrap_or_default().to_uppercase();
                ControlFlow::Break(format!("nested {head} statement"))
            }
        }
    }

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<String> {
        if !query.locks.is_empty() {
            return ControlFlow::Break("locking clause".into());
        }
        match query.body.as_ref() {
            SetExpr::Insert(_) | SetExpr::Update(_) | SetExpr::Delete(_) => {
                ControlFlow::Break("data modification inside query".into())
            }
            _ => ControlFlow::Continue(()),
        }
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<String> {
        match factor {
            TableFactor::Table { name, .. } => Self::check_name(name),
            TableFactor::Function { name, .. } => Self::check_name(name),
            _ => ControlFlow::Continue(()),
        }
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<String> {
        match expr {
            Expr::Function(f) => Self::check_name(&f.name),
            _ => ControlFlow::Continue(()),
        }
    }
}
