//! Rule-based stand-in for a hosted model, used by tests, the evaluation
//! harness and offline demos. It reads the same prompts a real model would
//! and answers only from what they contain, so it exercises the whole
//! pipeline deterministically.
//!
//! It knows the shape of the fixture schema (`contracts`, `managers`,
//! `amendments`) and the question templates of the benchmark; anything else
//! gets `NO_SQL` or a "not found" answer.

use std::sync::LazyLock;

use async_trait::async_trait;
use regex::{Captures, Regex};

use super::{ChatMessage, ChatProvider, ChatRole, LlmError};
use crate::ocs;
use crate::orchestrator::prompt::{
    BLOCK_END, CLASSIFY_MARKER, EXCERPTS_HEADER, QUESTION_PREFIX, REFUSAL_MARKER, SEARCH_MARKER, TABLE_HEADER,
};
use crate::sql_agent::{NO_SQL, SQL_REPAIR_MARKER, SQL_TASK_MARKER};

#[derive(Debug, Default, Clone, Copy)]
pub struct FixtureAnalyst;

impl FixtureAnalyst {
    pub fn new() -> Self {
        Self
    }
}

#[async_trait]
impl ChatProvider for FixtureAnalyst {
    fn name(&self) -> &str {
        "fixture-analyst"
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let system = messages
            .iter()
            .find(|m| m.role == ChatRole::System)
            .map_or("", |m| m.content.as_str());
        let last_user = messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map_or("", |m| m.content.as_str());

        if system.contains(CLASSIFY_MARKER) {
            return Ok(classify(last_user).into());
        }
        if system.contains(REFUSAL_MARKER) {
            return Ok(REFUSAL.into());
        }
        if system.contains(SEARCH_MARKER) {
            let q = last_user.strip_prefix(QUESTION_PREFIX).unwrap_or(last_user);
            return Ok(search_terms(q));
        }
        if system.contains(SQL_TASK_MARKER) || last_user.contains(SQL_REPAIR_MARKER) {
            let generation = messages
                .iter()
                .find(|m| m.role == ChatRole::User)
                .map_or("", |m| m.content.as_str());
            return Ok(sql_reply(generation));
        }
        if last_user.contains(EXCERPTS_HEADER) && last_user.contains(QUESTION_PREFIX) {
            return Ok(compose_answer(&AnswerPrompt::parse(last_user)));
        }
        let head: String = last_user.chars().take(120).collect();
        Err(LlmError::UnmatchedPrompt(head))
    }
}

const REFUSAL: &str = "I can only help with questions about the organization's administrative contracts, \
such as their object, suppliers, managers, terms, values and procurement modes. Please ask a question about a contract.";

static DOMAIN_WORDS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(contracts?|ocs|suppliers?|managers?|management|clauses?|tenders?|bidding|exemptions?|waivers?|dls?|inexigibility|inflexibility|amendments?|penalt\w*|procurement|vendors?|contrat\w*|fornecedor\w*|gestor\w*|cl[aá]usula\w*)\b",
    )
    .expect("static regex")
});

fn classify(question: &str) -> &'static str {
    if DOMAIN_WORDS.is_match(question) || !ocs::find_all(question).is_empty() {
        "IN"
    } else {
        "OUT"
    }
}

// ---------------------------------------------------------------------------
// SQL generation

const SUMMARY_COLUMNS: &str = "ocs, object, supplier, manager, total_value_cents / 100.0 AS total_value, start_date, end_date, situation, procurement_mode";

type SqlRule = (Regex, fn(&Captures, &[String]) -> Option<String>);

fn lit(s: &str) -> String {
    format!("'{}'", s.trim().replace('\'', "''"))
}

fn like(s: &str) -> String {
    format!("'%{}%'", s.trim().replace('\'', "''"))
}

fn id_list(ids: &[String]) -> Option<String> {
    (!ids.is_empty()).then(|| ids.iter().map(|i| lit(i)).collect::<Vec<_>>().join(", "))
}

fn by_ocs(columns: &str, ids: &[String]) -> Option<String> {
    Some(format!(
        "SELECT {columns} FROM contracts WHERE ocs IN ({}) ORDER BY ocs",
        id_list(ids)?
    ))
}

fn year(raw: &str) -> String {
    if raw.len() == 2 {
        format!("20{raw}")
    } else {
        raw.to_owned()
    }
}

/// English question words to the clause vocabulary of the documents.
const GLOSSARY: &[(&str, &str)] = &[
    (r"(?i)\b(subject|object|purpose)\b", "objeto"),
    (r"(?i)\b(suppliers?|company|companies|vendors?)\b", "contratada CNPJ"),
    (r"(?i)\b(managers?|management)\b", "gestão fiscalização gestor"),
    (
        r"(?i)\b(term|validity|duration|end|ends|expire\w*)\b",
        "prazo vigência meses",
    ),
    (r"(?i)\b(value|price|cost|amount)\b", "valor preço"),
    (r"(?i)\bpayments?\b", "pagamento"),
    (r"(?i)\b(penalt\w*|fines?|sanctions?)\b", "penalidades multa"),
    (r"(?i)\b(termination|rescission)\b", "rescisão rescindido"),
    (r"(?i)\bamendments?\b", "termo aditivo"),
    (r"(?i)\b(jurisdiction|court)\b", "foro"),
];

const QUESTION_WORDS: &[&str] = &[
    "what", "who", "which", "when", "where", "how", "do", "does", "is", "are", "show", "list", "give", "tell", "the",
    "a", "an", "ocs", "it", "we", "our", "i",
];

/// Clause vocabulary for the question's topics, then its proper names and
/// contract ids.
fn search_terms(question: &str) -> String {
    let mut terms: Vec<String> = GLOSSARY
        .iter()
        .filter(|(pattern, _)| Regex::new(pattern).expect("static glossary").is_match(question))
        .map(|(_, words)| (*words).to_owned())
        .collect();
    terms.extend(
        question
            .split(|c: char| !(c.is_alphanumeric() || c == '/'))
            .filter(|w| {
                w.chars().next().is_some_and(char::is_uppercase) && !QUESTION_WORDS.contains(&w.to_lowercase().as_str())
            })
            .map(str::to_owned),
    );
    terms.extend(ocs::distinct(question));
    terms.join(" ")
}

const STOPWORDS: &[&str] = &[
    "a",
    "an",
    "any",
    "the",
    "of",
    "for",
    "with",
    "our",
    "we",
    "contract",
    "contracts",
    "support",
    "service",
    "services",
    "maintenance",
    "technical",
];

/// `(object LIKE ... OR supplier LIKE ...)` for each significant word.
fn keyword_clause(text: &str) -> Option<String> {
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.to_lowercase().as_str()))
        .collect();
    if words.is_empty() {
        return None;
    }
    Some(
        words
            .iter()
            .map(|w| format!("(object LIKE {0} OR supplier LIKE {0})", like(w)))
            .collect::<Vec<_>>()
            .join(" AND "),
    )
}

static SQL_RULES: LazyLock<Vec<SqlRule>> = LazyLock::new(|| {
    let r = |p: &str| Regex::new(&format!("(?i){p}")).expect("static regex");
    vec![
        (r(r"\bsummary\b"), |_, ids| by_ocs(SUMMARY_COLUMNS, ids)),
        (
            r(r"\bmanagers of the contracts\b.*\b(?:company|supplier)\s+(?P<x>.+?)\s*\??$"),
            |c, _| {
                Some(format!(
                    "SELECT DISTINCT manager FROM contracts WHERE supplier LIKE {} ORDER BY manager",
                    like(&c["x"])
                ))
            },
        ),
        (r(r"\bhow many active\b|\bhow many\b.*\bactive\b"), |_, _| {
            Some("SELECT COUNT(*) FROM contracts WHERE situation = 'active'".into())
        }),
        (
            r(r"\bcontracts that will (?:end|expire) in (?:the year )?(?P<y>\d{2}|\d{4})\b"),
            |c, _| {
                Some(format!(
                "SELECT ocs, supplier, end_date FROM contracts WHERE strftime('%Y', end_date) = {} ORDER BY end_date, ocs",
                lit(&year(&c["y"]))
            ))
            },
        ),
        (
            r(r"\bhow many contracts do we have with (?:the )?(?:supplier|company)\s+(?P<x>.+?)\s*\??$"),
            |c, _| {
                Some(format!(
                    "SELECT COUNT(*) FROM contracts WHERE supplier LIKE {}",
                    like(&c["x"])
                ))
            },
        ),
        (
            r(r"\bhow many contracts\b.*\b(?:inexigibility|inflexibility|unenforceability)\b"),
            |_, _| Some("SELECT COUNT(*) FROM contracts WHERE procurement_mode = 'inexigibility'".into()),
        ),
        (
            r(r"\bhow many (?:DLs?|exemptions?|waivers?)\b.*\bin (?P<y>\d{2}|\d{4})\b"),
            |c, _| {
                Some(format!(
                "SELECT COUNT(*) FROM contracts WHERE procurement_mode = 'waiver_of_bidding' AND strftime('%Y', start_date) = {}",
                lit(&year(&c["y"]))
            ))
            },
        ),
        (
            r(r"\bhow many contracts does (?:employee )?(?P<x>.+?) have under\b"),
            |c, _| {
                Some(format!(
                    "SELECT COUNT(*) FROM contracts WHERE manager = {}",
                    lit(&c["x"])
                ))
            },
        ),
        (
            r(r"\bany contract whose (?:subject|object) is (?P<x>.+?)\s*\??$"),
            |c, _| {
                Some(format!(
                    "SELECT ocs, object FROM contracts WHERE object LIKE {} ORDER BY ocs",
                    like(&c["x"])
                ))
            },
        ),
        (
            r(r"\bany contract with (?:the )?(?:supplier|company) (?P<x>.+?)\s*\??$"),
            |c, _| {
                Some(format!(
                    "SELECT ocs, supplier, object FROM contracts WHERE supplier LIKE {} ORDER BY ocs",
                    like(&c["x"])
                ))
            },
        ),
        (r(r"\b(?:subject|object)\b"), |_, ids| by_ocs("ocs, object", ids)),
        (r(r"\bmanager\b"), |_, ids| by_ocs("ocs, manager", ids)),
        (r(r"\bsupplier\b"), |_, ids| by_ocs("ocs, supplier", ids)),
        (r(r"\b(?:term|validity|vig[eê]ncia)\b"), |_, ids| {
            by_ocs("ocs, start_date, end_date", ids)
        }),
        (r(r"\bdo we have (?:a|an|any) (?P<x>.+?) contracts?\s*\??$"), |c, _| {
            Some(format!(
                "SELECT ocs, supplier, object FROM contracts WHERE {} ORDER BY ocs",
                keyword_clause(&c["x"])?
            ))
        }),
        (
            r(r"\bwho is the (?:contract )?manager (?:of|for) the (?P<x>.+?)\s*\??$"),
            |c, _| {
                Some(format!(
                    "SELECT ocs, manager, object FROM contracts WHERE {} ORDER BY ocs",
                    keyword_clause(&c["x"])?
                ))
            },
        ),
        (r(r"."), |_, ids| by_ocs("ocs, object, supplier, manager", ids)),
    ]
});

/// Question-to-SQL mapping used by the analyst; exposed for tests.
pub fn sql_for_question(question: &str) -> Option<String> {
    let ids = ocs::distinct(question);
    let question = question.trim();
    SQL_RULES
        .iter()
        .find_map(|(re, build)| re.captures(question).and_then(|c| build(&c, &ids)))
}

fn sql_reply(prompt: &str) -> String {
    let question = prompt
        .rsplit_once("Question: ")
        .map_or("", |(_, q)| q.lines().next().unwrap_or(""));
    if !prompt.contains("TABLE contracts") {
        return NO_SQL.into();
    }
    match sql_for_question(question) {
        Some(sql) => {
            let mut out = String::new();
            for id in ocs::distinct(question) {
                out.push_str(&format!("ENTITY: {id} -> contracts.ocs\n"));
            }
            out.push_str(&format!("```sql\n{sql}\n```"));
            out
        }
        None => NO_SQL.into(),
    }
}

// ---------------------------------------------------------------------------
// Answer composition

#[derive(Debug, Default)]
struct PromptChunk {
    contract: String,
    clause: String,
    source: String,
    /// Clause text without the injected header.
    body: String,
}

#[derive(Debug, Default)]
struct PromptTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

#[derive(Debug, Default)]
struct AnswerPrompt {
    chunks: Vec<PromptChunk>,
    table: Option<PromptTable>,
    question: String,
}

static CHUNK_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<<chunk (\S+) \| score [-0-9.]+>>\n(.*?)\n<<end>>").expect("static regex"));
static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\[(contract|source): (.*?) \| clause: (.*?)\]$").expect("static regex"));

impl AnswerPrompt {
    fn parse(text: &str) -> Self {
        let (body, question) = text.rsplit_once(QUESTION_PREFIX).unwrap_or((text, ""));
        let (excerpts, database) = body.split_once(TABLE_HEADER).unwrap_or((body, ""));

        let chunks = CHUNK_BLOCK
            .captures_iter(excerpts)
            .map(|c| {
                let text = &c[2];
                let (header, rest) = text.split_once('\n').unwrap_or((text, ""));
                let mut chunk = PromptChunk {
                    body: rest.to_owned(),
                    ..Default::default()
                };
                if let Some(h) = HEADER.captures(header) {
                    if &h[1] == "contract" {
                        chunk.contract = h[2].to_owned();
                    } else {
                        chunk.source = h[2].to_owned();
                    }
                    chunk.clause = h[3].to_owned();
                }
                if chunk.source.is_empty() {
                    chunk.source = c[1].split('#').next().unwrap_or_default().to_owned();
                }
                chunk
            })
            .collect();

        let table = database.split_once("SQL: ").and_then(|(_, rest)| {
            let mut lines = rest.lines().skip(1);
            let columns: Vec<String> = lines.next()?.split(" | ").map(str::to_owned).collect();
            let rows = lines
                .take_while(|l| *l != BLOCK_END && !l.starts_with('('))
                .map(|l| l.split(" | ").map(str::to_owned).collect())
                .collect();
            Some(PromptTable { columns, rows })
        });

        AnswerPrompt {
            chunks,
            table,
            question: question.trim().to_owned(),
        }
    }
}

/// Clause-text cues for each kind of question, tried in order.
const CUES: &[(&str, &[&str])] = &[
    (r"(?i)\bsummary\b", &["OBJETO"]),
    (r"(?i)\b(subject|object)\b", &["OBJETO"]),
    (r"(?i)\bmanagers?\b", &["GESTÃO", "FISCALIZAÇÃO"]),
    (r"(?i)\b(suppliers?|company|vendor)\b", &["CONTRATADA:"]),
    (r"(?i)\b(term|validity|end|expire)\b", &["VIGÊNCIA"]),
    (r"(?i)\b(value|price|cost)\b", &["PREÇO"]),
    (r"(?i)\b(penalt\w*|fine|sanction\w*)\b", &["PENALIDADES"]),
    (r"(?i)\bpayment\b", &["PAGAMENTO"]),
    (r"(?i)\b(termination|rescission)\b", &["RESCISÃO"]),
];

fn cue_rank(question: &str, chunk: &PromptChunk) -> usize {
    for (pattern, needles) in CUES {
        if Regex::new(pattern).expect("static cue").is_match(question) {
            let clause = chunk.clause.to_uppercase();
            if needles.iter().any(|n| clause.contains(n)) {
                return 0;
            }
            if needles.iter().any(|n| chunk.body.contains(n)) {
                return 1;
            }
            return 2;
        }
    }
    2
}

/// Best excerpt for the question: cue match first, then prompt order
/// (which is score order). Only chunks of `restrict` when given.
fn best_chunk<'a>(prompt: &'a AnswerPrompt, restrict: &[String]) -> Option<&'a PromptChunk> {
    prompt
        .chunks
        .iter()
        .enumerate()
        .filter(|(_, c)| restrict.is_empty() || restrict.contains(&c.contract))
        .min_by_key(|(i, c)| (cue_rank(&prompt.question, c), *i))
        .map(|(_, c)| c)
}

fn excerpt(body: &str) -> String {
    let mut lines = body.lines();
    let first = lines.next().unwrap_or_default();
    // drop the heading line when it is a clause heading
    let text: Vec<&str> = if first.to_uppercase().contains("CLÁUSULA") || first.to_uppercase().contains("CLAUSULA") {
        lines.collect()
    } else {
        body.lines().collect()
    };
    let joined = text.join(" ").split_whitespace().collect::<Vec<_>>().join(" ");
    const LIMIT: usize = 600;
    if joined.chars().count() <= LIMIT {
        joined
    } else {
        let cut: String = joined.chars().take(LIMIT).collect();
        format!("{}...", cut.trim_end())
    }
}

fn label(column: &str) -> String {
    column.replace('_', " ")
}

fn render_rows(table: &PromptTable) -> String {
    let mut out = String::from("According to the contract database:");
    for row in &table.rows {
        let cells: Vec<String> = table
            .columns
            .iter()
            .zip(row)
            .map(|(col, val)| {
                if col == "ocs" {
                    format!("OCS {val}")
                } else {
                    format!("{}: {val}", label(col))
                }
            })
            .collect();
        out.push_str("\n- ");
        out.push_str(&cells.join("; "));
    }
    out
}

fn compose_answer(prompt: &AnswerPrompt) -> String {
    let ids = ocs::distinct(&prompt.question);
    let mut parts: Vec<String> = Vec::new();

    match &prompt.table {
        Some(t) if t.rows.len() == 1 && t.columns.len() == 1 && t.columns[0].to_uppercase().starts_with("COUNT") => {
            let n = &t.rows[0][0];
            parts.push(format!(
                "According to the contract database, the number of matching contracts is {n}."
            ));
        }
        Some(t) if !t.rows.is_empty() => parts.push(render_rows(t)),
        _ => {}
    }

    let from_table = !parts.is_empty();
    let chunk = if from_table {
        // only add supporting text for the contracts the question names
        (!ids.is_empty()).then(|| best_chunk(prompt, &ids)).flatten()
    } else if ids.is_empty() {
        best_chunk(prompt, &[])
    } else {
        best_chunk(prompt, &ids)
    };
    if let Some(c) = chunk {
        let clause = match c.clause.as_str() {
            "" => "(preamble)".to_owned(),
            c if c.starts_with('(') => c.to_owned(),
            c => format!("({c})"),
        };
        let text = excerpt(&c.body);
        if c.contract.is_empty() {
            parts.push(format!("According to the document {} {clause}: {text}", c.source));
        } else {
            parts.push(format!("According to contract OCS {} {clause}: {text}", c.contract));
            if !from_table {
                parts.push(format!("The OCS number is {}.", c.contract));
            }
        }
    }

    if parts.is_empty() {
        "The requested information was not found in the contract documents or in the contract database.".into()
    } else {
        parts.join("\n\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::prompt::classification_prompt;

    async fn ask(messages: Vec<ChatMessage>) -> String {
        FixtureAnalyst.complete(&messages).await.unwrap()
    }

    #[tokio::test]
    async fn search_terms_use_clause_vocabulary() {
        use crate::orchestrator::prompt::search_query_prompt;
        let terms = ask(search_query_prompt("What is the term of the OCS 400/2021 contract?")).await;
        assert_eq!(terms, "prazo vigência meses 400/2021");
        let terms = ask(search_query_prompt("Do we have any contract with the supplier Oracle?")).await;
        assert_eq!(terms, "contratada CNPJ Oracle");
    }

    #[tokio::test]
    async fn classification() {
        assert_eq!(ask(classification_prompt("How are you?")).await, "OUT");
        assert_eq!(
            ask(classification_prompt("Will Bologna FC win the 2025 Champions League?")).await,
            "OUT"
        );
        assert_eq!(
            ask(classification_prompt(
                "Who is the contract manager for the Database support?"
            ))
            .await,
            "IN"
        );
        assert_eq!(ask(classification_prompt("Show a summary of 278/2023.")).await, "IN");
    }

    #[test]
    fn sql_rules() {
        assert_eq!(
            sql_for_question("How many active IT contracts do we currently have?").unwrap(),
            "SELECT COUNT(*) FROM contracts WHERE situation = 'active'"
        );
        assert_eq!(
            sql_for_question("Who is the manager of the OCS 278/2023 contract?").unwrap(),
            "SELECT ocs, manager FROM contracts WHERE ocs IN ('278/2023') ORDER BY ocs"
        );
        assert_eq!(
            sql_for_question("How many contracts does employee Ana O'Neil have under his/her management?").unwrap(),
            "SELECT COUNT(*) FROM contracts WHERE manager = 'Ana O''Neil'"
        );
        assert_eq!(
            sql_for_question("How many DLs (Exemptions from Tenders) were contracted in 22?").unwrap(),
            "SELECT COUNT(*) FROM contracts WHERE procurement_mode = 'waiver_of_bidding' AND strftime('%Y', start_date) = '2022'"
        );
        assert_eq!(
            sql_for_question("Do we have an Oracle Support contract?").unwrap(),
            "SELECT ocs, supplier, object FROM contracts WHERE (object LIKE '%Oracle%' OR supplier LIKE '%Oracle%') ORDER BY ocs"
        );
        assert_eq!(sql_for_question("What is the weather?"), None);
    }

    #[test]
    fn parses_answer_prompt() {
        let text = format!(
            "{EXCERPTS_HEADER}\n<<chunk a.txt#001 | score 0.5000>>\n[contract: 278/2023 | clause: CLÁUSULA PRIMEIRA - OBJETO]\nCLÁUSULA PRIMEIRA - OBJETO\nSuporte Oracle.\n<<end>>\n\n\
             {TABLE_HEADER}\nSQL: SELECT ocs, manager FROM contracts\nocs | manager\n278/2023 | Ana Souza\n<<end>>\n\n{QUESTION_PREFIX}Who is the manager of OCS 278/2023?"
        );
        let p = AnswerPrompt::parse(&text);
        assert_eq!(p.chunks.len(), 1);
        assert_eq!(p.chunks[0].contract, "278/2023");
        assert_eq!(p.chunks[0].clause, "CLÁUSULA PRIMEIRA - OBJETO");
        let t = p.table.as_ref().unwrap();
        assert_eq!(t.columns, ["ocs", "manager"]);
        assert_eq!(t.rows, vec![vec!["278/2023".to_string(), "Ana Souza".to_string()]]);
        let answer = compose_answer(&p);
        assert!(answer.contains("OCS 278/2023; manager: Ana Souza"), "{answer}");
    }

    #[test]
    fn rag_only_answer_cites_contract() {
        let text = format!(
            "{EXCERPTS_HEADER}\n<<chunk a.txt#000 | score 0.9000>>\n[contract: 278/2023 | clause: (preamble)]\nCONTRATADA: Oracle do Brasil Sistemas Ltda.\n<<end>>\n\
             <<chunk a.txt#001 | score 0.5000>>\n[contract: 278/2023 | clause: CLÁUSULA PRIMEIRA - OBJETO]\nCLÁUSULA PRIMEIRA - OBJETO\nSuporte Oracle Database.\n<<end>>\n\n\
             {TABLE_HEADER}\n(none)\n\n{QUESTION_PREFIX}What is the subject of the OCS 278/2023 contract?"
        );
        let answer = compose_answer(&AnswerPrompt::parse(&text));
        assert!(answer
            .starts_with("According to contract OCS 278/2023 (CLÁUSULA PRIMEIRA - OBJETO): Suporte Oracle Database."));
        assert!(answer.ends_with("The OCS number is 278/2023."));
    }
}
