//! Turning free-text model answers into label sets.
//!
//! Matching is exact after normalization. The answer is split on commas and
//! newlines only; within a piece the rules are, in order:
//!
//! 1. Anything up to and including the last `:` is a preamble ("The labels
//!    are:") and is reported as unmatched.
//! 2. The remainder is normalized with [`normalize_token`].
//! 3. If it equals a schema label, that label is taken.
//! 4. Otherwise, if it starts with a schema label followed by a space, the
//!    longest such label is taken and the rest goes back to step 3.
//! 5. Whatever is left is reported as unmatched.
//!
//! Nothing is ever matched by edit distance or synonyms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{LabelSchema, LabelSet};
use crate::scenario::ScenarioId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("label index {index} is outside schema `{schema}` ({len} labels)")]
    OutsideSchema {
        schema: String,
        index: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseResult {
    pub labels: LabelSet,
    pub unmatched: Vec<String>,
    /// True iff the answer was a clean comma list of distinct canonical labels.
    pub exact: bool,
}

fn strip_list_marker(s: &str) -> Option<&str> {
    if let Some(rest) = s.strip_prefix(['-', '*', '•']) {
        return Some(rest);
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(after) = rest.strip_prefix(['.', ')']) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return Some(after);
            }
        }
    }
    None
}

/// Lowercases, trims, collapses whitespace, strips leading list markers
/// (`-`, `*`, `1.`) and trailing `.`/`;`. Applying it twice is a no-op.
pub fn normalize_token(raw: &str) -> String {
    let mut s: String = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    loop {
        let before = s.len();
        let mut t = s.trim();
        while let Some(rest) = strip_list_marker(t) {
            t = rest.trim_start();
        }
        let t = t.trim_end_matches(['.', ';']).trim_end();
        s = t.to_string();
        if s.len() == before {
            return s;
        }
    }
}

/// Longest schema label that is a whole-word prefix of `token`.
fn leading_label(token: &str, schema: &LabelSchema) -> Option<(usize, usize)> {
    schema
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            token.len() > l.len()
                && token.starts_with(l.as_str())
                && token.as_bytes()[l.len()] == b' '
        })
        .max_by_key(|(_, l)| l.len())
        .map(|(i, l)| (i, l.len()))
}

fn match_token(mut token: String, schema: &LabelSchema, out: &mut ParseResult) -> bool {
    let mut clean = true;
    loop {
        if let Some(i) = schema.index_of(&token) {
            out.labels.insert(i);
            return clean;
        }
        clean = false;
        match leading_label(&token, schema) {
            Some((i, len)) => {
                out.labels.insert(i);
                token = normalize_token(&token[len..]);
                if token.is_empty() {
                    return false;
                }
            }
            None => {
                out.unmatched.push(token);
                return false;
            }
        }
    }
}

/// Parses a model answer into labels of `schema`. Never fails.
pub fn parse_label_list(raw: &str, schema: &LabelSchema) -> ParseResult {
    let mut out = ParseResult::default();
    let mut clean = !raw.trim().is_empty() && !raw.contains('\n');
    let mut pieces = 0;
    for piece in raw.split([',', '\n']) {
        pieces += 1;
        let body = match piece.rfind(':') {
            Some(pos) => {
                let preamble = normalize_token(&piece[..=pos]);
                if !preamble.is_empty() {
                    out.unmatched.push(preamble);
                }
                clean = false;
                &piece[pos + 1..]
            }
            None => piece,
        };
        let token = normalize_token(body);
        if token.is_empty() {
            clean = false;
            continue;
        }
        if token != body.trim() {
            clean = false;
        }
        let before = out.labels;
        if !match_token(token, schema, &mut out) || out.labels == before {
            // An unmatched piece or a repeated label.
            clean = false;
        }
    }
    out.exact = clean && pieces > 0 && out.unmatched.is_empty();
    out
}

/// Joins labels in schema order with `", "`.
pub fn serialize_labels(labels: LabelSet, schema: &LabelSchema) -> Result<String, SerializeError> {
    if let Some(index) = labels.iter().find(|&i| i >= schema.len()) {
        return Err(SerializeError::OutsideSchema {
            schema: schema.dataset_name().to_string(),
            index,
            len: schema.len(),
        });
    }
    Ok(schema.names(labels).join(", "))
}

/// One scored model answer; the line format of prediction JSONL files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub text_id: String,
    pub annotator_id: String,
    pub scenario: ScenarioId,
    #[serde(default)]
    pub raw_response: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub unmatched: Vec<String>,
    #[serde(default)]
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn unparsed(text_id: &str, annotator_id: &str, scenario: ScenarioId) -> Self {
        Self {
            text_id: text_id.to_string(),
            annotator_id: annotator_id.to_string(),
            scenario,
            raw_response: String::new(),
            labels: Vec::new(),
            unmatched: Vec::new(),
            exact: false,
            error: None,
        }
    }

    /// Fills `labels`, `unmatched` and `exact` from `raw_response`.
    ///
    /// Records that already carry labels and no raw text (classification
    /// heads write label arrays directly) are left as they are.
    pub fn parse_with(&mut self, schema: &LabelSchema) {
        if self.raw_response.is_empty() && !self.labels.is_empty() {
            return;
        }
        let parsed = parse_label_list(&self.raw_response, schema);
        self.labels = schema
            .names(parsed.labels)
            .into_iter()
            .map(String::from)
            .collect();
        self.unmatched = parsed.unmatched;
        self.exact = parsed.exact;
    }
}
