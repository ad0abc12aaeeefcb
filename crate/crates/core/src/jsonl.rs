//! Line-delimited JSON datasets.
//!
//! One object per line with `tokens` (strings), `label` (integer >= 0),
//! optional `rationale_spans` (`[start, end)` pairs) and optional `segments`
//! (start offsets). Without `segments`, a new segment starts after every
//! separator token.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{RatError, Result};
use crate::vocab::Vocab;

pub const DEFAULT_SEPARATOR: &str = ".";

#[derive(Debug, Deserialize)]
struct RawLine {
    tokens: Vec<String>,
    label: i64,
    #[serde(default)]
    rationale_spans: Option<Vec<[i64; 2]>>,
    #[serde(default)]
    segments: Option<Vec<i64>>,
    #[serde(default)]
    meta: Option<BTreeMap<String, String>>,
}

#[derive(Serialize)]
struct OutLine<'a> {
    tokens: Vec<&'a str>,
    label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    rationale_spans: Option<Vec<[usize; 2]>>,
    segments: &'a [usize],
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    meta: &'a BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct JsonlReport {
    pub examples: Vec<Example>,
    pub errors: Vec<LineError>,
}

fn non_negative(v: i64, what: &str) -> std::result::Result<usize, String> {
    usize::try_from(v).map_err(|_| format!("{what} must be non-negative, got {v}"))
}

fn segments_from_separator(tokens: &[String], separator: &str) -> Vec<usize> {
    let mut out = vec![0];
    for (i, t) in tokens.iter().enumerate() {
        if t == separator && i + 1 < tokens.len() {
            out.push(i + 1);
        }
    }
    out
}

fn parse_line(
    text: &str,
    vocab: &mut Vocab,
    separator: &str,
) -> std::result::Result<Example, String> {
    let raw: RawLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let label = non_negative(raw.label, "label")?;
    let segments = match raw.segments {
        Some(s) => s
            .into_iter()
            .map(|v| non_negative(v, "segment"))
            .collect::<std::result::Result<_, _>>()?,
        None => segments_from_separator(&raw.tokens, separator),
    };
    let spans = match raw.rationale_spans {
        Some(s) => Some(
            s.into_iter()
                .map(|[a, b]| Ok((non_negative(a, "span start")?, non_negative(b, "span end")?)))
                .collect::<std::result::Result<Vec<_>, String>>()?,
        ),
        None => None,
    };
    // Validate before touching the vocabulary so rejected lines add nothing.
    let probe = Example {
        tokens: vec![0; raw.tokens.len()],
        segments: segments.clone(),
        label,
        gold_spans: spans.clone(),
        meta: BTreeMap::new(),
    };
    probe.validate().map_err(|e| match e {
        RatError::Example(m) => m,
        other => other.to_string(),
    })?;
    let tokens = raw.tokens.iter().map(|t| vocab.intern(t)).collect();
    Ok(Example {
        tokens,
        segments,
        label,
        gold_spans: spans,
        meta: raw.meta.unwrap_or_default(),
    })
}

/// Parse JSONL text, extending `vocab`. Bad lines are reported, not fatal.
pub fn parse_jsonl(text: &str, vocab: &mut Vocab, separator: &str) -> JsonlReport {
    let mut report = JsonlReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, vocab, separator) {
            Ok(ex) => report.examples.push(ex),
            Err(message) => report.errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    report
}

pub fn load_jsonl(path: &Path, vocab: &mut Vocab, separator: &str) -> Result<JsonlReport> {
    let text = std::fs::read_to_string(path).map_err(|e| RatError::io(path, e))?;
    Ok(parse_jsonl(&text, vocab, separator))
}

pub fn example_to_json(ex: &Example, vocab: &Vocab) -> String {
    let line = OutLine {
        tokens: ex.tokens.iter().map(|&t| vocab.token(t)).collect(),
        label: ex.label,
        rationale_spans: ex
            .gold_spans
            .as_ref()
            .map(|s| s.iter().map(|&(a, b)| [a, b]).collect()),
        segments: &ex.segments,
        meta: &ex.meta,
    };
    serde_json::to_string(&line).expect("plain data serializes")
}

pub fn to_jsonl(examples: &[Example], vocab: &Vocab) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&example_to_json(ex, vocab));
        out.push('\n');
    }
    out
}
