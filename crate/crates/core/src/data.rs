use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};
use crate::vocab::Vocab;

/// Unit of selection: whole segments (sentences) or single tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Sentence,
    Token,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Sentence => "sentence",
            Granularity::Token => "token",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Start offset of each segment; the first is always 0.
    pub segments: Vec<usize>,
    pub label: usize,
    /// Half-open `[start, end)` token ranges.
    pub gold_spans: Option<Vec<(usize, usize)>>,
    pub meta: BTreeMap<String, String>,
}

impl Example {
    pub fn new(
        tokens: Vec<usize>,
        segments: Vec<usize>,
        label: usize,
        gold_spans: Option<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        let ex = Self {
            tokens,
            segments,
            label,
            gold_spans,
            meta: BTreeMap::new(),
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(RatError::Example("empty token sequence".into()));
        }
        if self.segments.first() != Some(&0) {
            return Err(RatError::Example("segments must start at 0".into()));
        }
        if self.segments.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RatError::Example(
                "segments must be strictly increasing".into(),
            ));
        }
        if self
            .segments
            .last()
            .is_some_and(|&s| s >= self.tokens.len())
        {
            return Err(RatError::Example(format!(
                "segment start {} beyond {} tokens",
                self.segments.last().unwrap(),
                self.tokens.len()
            )));
        }
        if let Some(spans) = &self.gold_spans {
            check_spans(spans, self.tokens.len())?;
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_range(&self, i: usize) -> Range<usize> {
        let end = self
            .segments
            .get(i + 1)
            .copied()
            .unwrap_or(self.tokens.len());
        self.segments[i]..end
    }

    pub fn num_units(&self, granularity: Granularity) -> usize {
        match granularity {
            Granularity::Sentence => self.segments.len(),
            Granularity::Token => self.tokens.len(),
        }
    }

    pub fn unit_ranges(&self, granularity: Granularity) -> Vec<Range<usize>> {
        match granularity {
            Granularity::Sentence => (0..self.segments.len())
                .map(|i| self.segment_range(i))
                .collect(),
            Granularity::Token => (0..self.tokens.len()).map(|i| i..i + 1).collect(),
        }
    }

    /// Per-token gold flags, if annotated.
    pub fn gold_tokens(&self) -> Option<Vec<bool>> {
        let spans = self.gold_spans.as_ref()?;
        let mut out = vec![false; self.tokens.len()];
        for &(s, e) in spans {
            out[s..e].iter_mut().for_each(|g| *g = true);
        }
        Some(out)
    }
}

pub(crate) fn check_spans(spans: &[(usize, usize)], len: usize) -> Result<()> {
    for &(s, e) in spans {
        if s >= e || e > len {
            return Err(RatError::Example(format!(
                "span [{s},{e}) out of bounds for {len} tokens"
            )));
        }
    }
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(RatError::Example("overlapping spans".into()));
    }
    Ok(())
}

/// Train/dev/test splits over one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .map(|e| e.label + 1)
            .max()
            .unwrap_or(0)
            .max(2)
    }

    pub fn splits(&self) -> [(&'static str, &[Example]); 3] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }
}
