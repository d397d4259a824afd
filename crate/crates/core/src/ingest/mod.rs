//! Contract document parsing and clause-level chunking.
//!
//! A contract is split at clause headings into [`Section`]s; each section
//! becomes one [`Chunk`] whose text is prefixed with a single source
//! header line. Stripping that header and concatenating chunk bodies in order
//! gives back the original text byte for byte.

mod manifest;
mod pipeline;

pub use manifest::{load_manifest, ManifestEntry, ManifestError};
pub use pipeline::{ingest_entries, IngestReport, PipelineError};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ocs;

/// Sections longer than this (in bytes) are split at paragraph boundaries.
pub const MAX_SECTION_CHARS: usize = 6000;

const PREAMBLE_LABEL: &str = "(preamble)";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document {source_name} is empty")]
    EmptyDocument { source_name: String },
    #[error("no heading patterns configured")]
    NoHeadingPatterns,
    #[error("invalid heading pattern {pattern:?}: {message}")]
    InvalidPattern { pattern: String, message: String },
    #[error("invalid contract id {0:?}, expected nnn/yyyy")]
    InvalidContractId(String),
}

/// Heading recognizers, in two tiers.
///
/// The primary tier is always consulted. The fallback tier is only used for
/// documents in which no primary pattern matches at all, so an all-caps
/// preamble line in a clause-structured contract never opens a section.
#[derive(Debug, Clone)]
pub struct HeadingRules {
    primary: Vec<Regex>,
    fallback: Vec<Regex>,
}

impl HeadingRules {
    pub fn new<S: AsRef<str>>(primary: &[S], fallback: &[S]) -> Result<Self, IngestError> {
        if primary.is_empty() && fallback.is_empty() {
            return Err(IngestError::NoHeadingPatterns);
        }
        Ok(Self {
            primary: compile_all(primary)?,
            fallback: compile_all(fallback)?,
        })
    }

    /// Portuguese `CLÁUSULA <ordinal>` headings with an all-caps line fallback.
    pub fn portuguese_clauses() -> Self {
        Self::new(DEFAULT_PRIMARY, DEFAULT_FALLBACK).expect("default heading patterns compile")
    }

    /// Byte ranges of heading lines in `text`, ordered and non-overlapping.
    fn headings(&self, text: &str) -> Vec<(usize, usize)> {
        let found = scan(&self.primary, text);
        if found.is_empty() {
            scan(&self.fallback, text)
        } else {
            found
        }
    }
}

impl Default for HeadingRules {
    fn default() -> Self {
        Self::portuguese_clauses()
    }
}

pub const DEFAULT_PRIMARY: &[&str] = &[
    r"(?m)^[ \t]*CL[ÁA]USULA[ \t]+[\p{Lu}\d][\p{Lu}\dºª°]*(?:[ \t]+[\p{Lu}][\p{Lu}]*)?(?:[ \t]*[-–—:.][^\r\n]*)?[ \t]*\r?$",
];

pub const DEFAULT_FALLBACK: &[&str] = &[r"(?m)^[ \t]*\p{Lu}[\p{Lu}\d \t.,:;/ºª°()\-–—]{3,}\r?$"];

fn compile_all<S: AsRef<str>>(patterns: &[S]) -> Result<Vec<Regex>, IngestError> {
    patterns
        .iter()
        .map(|p| {
            Regex::new(p.as_ref()).map_err(|e| IngestError::InvalidPattern {
                pattern: p.as_ref().to_owned(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn scan(patterns: &[Regex], text: &str) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = patterns
        .iter()
        .flat_map(|re| re.find_iter(text).map(|m| (m.start(), m.end())))
        .filter(|(s, e)| !text[*s..*e].trim().is_empty())
        .collect();
    spans.sort();
    // Keep the first of any overlapping pair.
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for span in spans {
        match out.last() {
            Some(&(_, end)) if span.0 < end => {}
            _ => out.push(span),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub index: usize,
    /// Heading line, trimmed. Empty for the preamble.
    pub title: String,
    /// Section text including its heading line.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractDocument {
    pub source: String,
    pub contract_id: Option<String>,
    pub raw_text: String,
    pub sections: Vec<Section>,
}

impl ContractDocument {
    /// Overrides the detected contract id (manifest or CMS supplied).
    pub fn with_contract_id(mut self, id: &str) -> Result<Self, IngestError> {
        let normalized = ocs::normalize(id)
            .filter(|n| ocs::is_valid(n))
            .ok_or_else(|| IngestError::InvalidContractId(id.to_owned()))?;
        self.contract_id = Some(normalized);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMetadata {
    pub source: String,
    /// Contract id, or empty when unknown.
    pub contract: String,
    /// Clause heading, or empty for the preamble.
    pub clause: String,
    pub section: usize,
    /// Sub-chunk ordinal when an oversized section was split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<usize>,
    pub neighbor_prev: Option<String>,
    pub neighbor_next: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    /// Source header line followed by the section text.
    pub text: String,
    /// Byte offset in `text` where the original section text starts.
    pub body_offset: usize,
    pub metadata: ChunkMetadata,
}

impl Chunk {
    /// Section text without the injected header line.
    pub fn body(&self) -> &str {
        &self.text[self.body_offset..]
    }

    pub fn header(&self) -> &str {
        self.text[..self.body_offset].trim_end_matches('\n')
    }
}

/// Splits `raw_text` at heading lines.
pub fn parse_document(raw_text: &str, source: &str, rules: &HeadingRules) -> Result<ContractDocument, IngestError> {
    if raw_text.trim().is_empty() {
        return Err(IngestError::EmptyDocument {
            source_name: source.to_owned(),
        });
    }

    let headings = rules.headings(raw_text);
    let mut sections = Vec::with_capacity(headings.len() + 1);
    let mut push = |title: &str, body: &str| {
        sections.push(Section {
            index: sections.len(),
            title: title.trim().to_owned(),
            body: body.to_owned(),
        });
    };

    let first_start = headings.first().map_or(raw_text.len(), |h| h.0);
    if first_start > 0 {
        push("", &raw_text[..first_start]);
    }
    for (i, &(start, end)) in headings.iter().enumerate() {
        let next = headings.get(i + 1).map_or(raw_text.len(), |h| h.0);
        push(&raw_text[start..end], &raw_text[start..next]);
    }

    Ok(ContractDocument {
        source: source.to_owned(),
        contract_id: extract_contract_id(raw_text),
        raw_text: raw_text.to_owned(),
        sections,
    })
}

/// First contract id in the text, preferring occurrences explicitly marked
/// `OCS` over bare `nnn/yyyy` numbers.
pub fn extract_contract_id(raw_text: &str) -> Option<String> {
    let found = ocs::find_all(raw_text);
    found
        .iter()
        .find(|m| m.prefixed)
        .or_else(|| found.first())
        .map(|m| m.id.clone())
}

/// One chunk per section, oversized sections split at paragraph breaks.
pub fn chunk_document(doc: &ContractDocument) -> Vec<Chunk> {
    let contract = doc.contract_id.clone().unwrap_or_default();
    let mut chunks = Vec::with_capacity(doc.sections.len());

    for section in &doc.sections {
        let pieces = split_long(&section.body, MAX_SECTION_CHARS);
        let split = pieces.len() > 1;
        for (part, piece) in pieces.into_iter().enumerate() {
            let id = if split {
                format!("{}#{:03}.{:02}", doc.source, section.index, part)
            } else {
                format!("{}#{:03}", doc.source, section.index)
            };
            let header = header_line(&doc.source, &contract, &section.title);
            let mut text = String::with_capacity(header.len() + 1 + piece.len());
            text.push_str(&header);
            text.push('\n');
            let body_offset = text.len();
            text.push_str(piece);
            chunks.push(Chunk {
                id,
                text,
                body_offset,
                metadata: ChunkMetadata {
                    source: doc.source.clone(),
                    contract: contract.clone(),
                    clause: section.title.clone(),
                    section: section.index,
                    part: split.then_some(part),
                    neighbor_prev: None,
                    neighbor_next: None,
                },
            });
        }
    }

    for i in 0..chunks.len() {
        if i > 0 {
            chunks[i].metadata.neighbor_prev = Some(chunks[i - 1].id.clone());
        }
        if i + 1 < chunks.len() {
            chunks[i].metadata.neighbor_next = Some(chunks[i + 1].id.clone());
        }
    }
    chunks
}

fn header_line(source: &str, contract: &str, clause: &str) -> String {
    let clause = if clause.is_empty() { PREAMBLE_LABEL } else { clause };
    if contract.is_empty() {
        format!("[source: {source} | clause: {clause}]")
    } else {
        format!("[contract: {contract} | clause: {clause}]")
    }
}

/// Splits at blank-line paragraph boundaries so that each piece stays under
/// `limit` bytes where possible. A single paragraph longer than `limit` is
/// kept whole. Concatenating the pieces yields `text`.
fn split_long(text: &str, limit: usize) -> Vec<&str> {
    if text.len() <= limit {
        return vec![text];
    }
    // paragraph boundaries: just past each run of blank lines
    let mut bounds = Vec::new();
    let mut search = 0;
    while let Some(pos) = text[search..].find("\n\n") {
        let mut cut = search + pos + 2;
        while text[cut..].starts_with('\n') {
            cut += 1;
        }
        if cut < text.len() {
            bounds.push(cut);
        }
        search = cut;
    }
    bounds.push(text.len());

    let mut pieces = Vec::new();
    let (mut start, mut end) = (0, 0);
    for bound in bounds {
        if bound - start > limit && end > start {
            pieces.push(&text[start..end]);
            start = end;
        }
        end = bound;
    }
    pieces.push(&text[start..]);
    pieces
}
