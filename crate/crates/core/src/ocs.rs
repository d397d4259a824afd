//! Contract identifier ("OCS number") recognition.
//!
//! Identifiers look like `278/2023`: up to five digits, a slash, a four digit
//! year. In running text they are frequently prefixed with `OCS`, and the
//! same digit/slash shape also shows up inside dates (`15/03/2023`), law
//! numbers (`13.303/2016`) and company registry numbers
//! (`59.456.277/0001-76`). Matches glued to such surroundings are rejected.

use std::sync::LazyLock;

use regex::Regex;

static CANDIDATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?P<prefix>\bOCS\b[\s:.]*(?:n[º°o]\.?\s*)?)?(?P<num>\d{1,5})\s*/\s*(?P<year>\d{4})")
        .expect("static regex")
});

static STRICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{1,5}/\d{4}$").expect("static regex"));

/// One identifier occurrence in a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcsMatch {
    /// Normalized `nnn/yyyy` form.
    pub id: String,
    pub start: usize,
    pub end: usize,
    /// Whether the occurrence was introduced by an explicit `OCS` marker.
    pub prefixed: bool,
}

/// Returns true when `id` is already in normalized `nnn/yyyy` form.
pub fn is_valid(id: &str) -> bool {
    STRICT.is_match(id) && normalize(id).as_deref() == Some(id)
}

/// Normalizes loose spellings (`OCS 0278 / 2023`) to `278/2023`.
pub fn normalize(raw: &str) -> Option<String> {
    find_all(raw).into_iter().next().map(|m| m.id)
}

/// All identifier occurrences in document order.
pub fn find_all(text: &str) -> Vec<OcsMatch> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for caps in CANDIDATE.captures_iter(text) {
        let whole = caps.get(0).expect("group 0");
        let num = caps.name("num").expect("num group");
        let year = caps.name("year").expect("year group");
        let prefixed = caps.name("prefix").is_some();

        // The digits must not continue a longer number on either side.
        if !prefixed && num.start() > 0 {
            let before = bytes[num.start() - 1];
            if before.is_ascii_digit() || matches!(before, b'/' | b'.' | b',') {
                continue;
            }
        }
        if let Some(&after) = bytes.get(year.end()) {
            let continues_number = after == b'.' && bytes.get(year.end() + 1).is_some_and(u8::is_ascii_digit);
            if after.is_ascii_digit() || matches!(after, b'/' | b'-') || continues_number {
                continue;
            }
        }

        let digits = num.as_str().trim_start_matches('0');
        let digits = if digits.is_empty() { "0" } else { digits };
        out.push(OcsMatch {
            id: format!("{digits}/{}", year.as_str()),
            start: whole.start(),
            end: whole.end(),
            prefixed,
        });
    }
    out
}

/// Distinct identifiers in order of first appearance.
pub fn distinct(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for m in find_all(text) {
        if !seen.contains(&m.id) {
            seen.push(m.id);
        }
    }
    seen
}
