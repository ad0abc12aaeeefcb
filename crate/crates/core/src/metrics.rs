//! Task accuracy and rationale agreement with human-style annotations.
//!
//! Precision, recall and F1 are macro averages: each annotated example is
//! scored on its own and the corpus value is the mean.

use ratlab_grad::Tape;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Granularity};
use crate::error::{RatError, Result};
use crate::model::{topq_mask, MaskSource, RationaleMask, RationaleNet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn token_prf1(selected: &[bool], gold: &[bool]) -> Prf1 {
    let both = selected
        .iter()
        .zip(gold)
        .filter(|(s, g)| **s && **g)
        .count() as f64;
    let sel = selected.iter().filter(|s| **s).count() as f64;
    let gol = gold.iter().filter(|g| **g).count() as f64;
    let precision = if sel > 0.0 { both / sel } else { 0.0 };
    let recall = if gol > 0.0 { both / gol } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

/// Percent of masks that keep the first segment.
pub fn x1_ratio(masks: &[RationaleMask]) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    let hits = masks
        .iter()
        .filter(|m| m.bits.first() == Some(&true))
        .count();
    100.0 * hits as f64 / masks.len() as f64
}

/// Number of maximal runs of kept positions.
pub fn count_spans(flags: &[bool]) -> usize {
    let mut spans = 0;
    let mut prev = false;
    for &f in flags {
        if f && !prev {
            spans += 1;
        }
        prev = f;
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent for token-level selection.
    pub x1_pct: Option<f64>,
    pub selected_fraction: f64,
    pub mean_spans: f64,
    pub examples: usize,
    pub annotated: usize,
    pub skipped_unannotated: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub masks: Vec<RationaleMask>,
    pub predictions: Vec<usize>,
}

/// Deterministic selection: top-q when `q` is set, otherwise the argmax
/// segment (sentence mode) or every token with probability at least 0.5.
pub fn hard_selection(
    net: &RationaleNet,
    tape: &mut Tape<'_>,
    ex: &Example,
    q: Option<f64>,
) -> Result<RationaleMask> {
    let out = net.generator_forward(tape, ex)?;
    let dist = net.selection(tape, &out);
    match (q, dist.granularity) {
        (Some(q), _) => topq_mask(&dist, q),
        (None, Granularity::Sentence) => {
            let mut m = RationaleMask::one_hot(dist.len(), dist.argmax());
            m.source = MaskSource::TopQ;
            Ok(m)
        }
        (None, Granularity::Token) => Ok(RationaleMask {
            bits: dist.weights.iter().map(|&p| p >= 0.5).collect(),
            source: MaskSource::TopQ,
        }),
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(net: &RationaleNet, examples: &[Example], q: Option<f64>) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(RatError::EmptySplit("evaluation"));
    }
    let g = net.granularity();
    let mut masks = Vec::with_capacity(examples.len());
    let mut predictions = Vec::with_capacity(examples.len());
    let (mut correct, mut p_sum, mut r_sum, mut f_sum, mut frac_sum, mut span_sum) =
        (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut annotated = 0;
    for ex in examples {
        let mut tape = Tape::new(net.store());
        let mask = hard_selection(net, &mut tape, ex, q)?;
        let pred = net.predict_from_mask(&mut tape, ex, &mask)?;
        let label = argmax(tape.value(pred).data());
        correct += usize::from(label == ex.label);
        let flags = mask.token_flags(ex, g)?;
        frac_sum += flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64;
        span_sum += count_spans(&flags) as f64;
        if let Some(gold) = ex.gold_tokens() {
            let s = token_prf1(&flags, &gold);
            p_sum += s.precision;
            r_sum += s.recall;
            f_sum += s.f1;
            annotated += 1;
        }
        predictions.push(label);
        masks.push(mask);
    }
    let n = examples.len() as f64;
    let mean = |s: f64| {
        if annotated > 0 {
            s / annotated as f64
        } else {
            0.0
        }
    };
    let report = MetricsReport {
        averaging: "macro".into(),
        accuracy: correct as f64 / n,
        precision: mean(p_sum),
        recall: mean(r_sum),
        f1: mean(f_sum),
        x1_pct: (g == Granularity::Sentence).then(|| x1_ratio(&masks)),
        selected_fraction: frac_sum / n,
        mean_spans: span_sum / n,
        examples: examples.len(),
        annotated,
        skipped_unannotated: examples.len() - annotated,
    };
    Ok(Evaluation {
        report,
        masks,
        predictions,
    })
}
