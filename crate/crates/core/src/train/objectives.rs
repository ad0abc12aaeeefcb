use ratlab_grad::{cross_entropy, js_divergence, Tape, Tensor, Var};

use crate::error::Result;
use crate::metrics::count_spans;

/// Cross-entropy of the rationale predictor's output.
pub fn loss_rationale(tape: &mut Tape<'_>, pred: Var, label: usize) -> Result<Var> {
    Ok(cross_entropy(tape, pred, label)?.loss)
}

/// Cross-entropy of the attention predictor's output.
pub fn loss_attention(tape: &mut Tape<'_>, pred: Var, label: usize) -> Result<Var> {
    Ok(cross_entropy(tape, pred, label)?.loss)
}

pub fn loss_js(tape: &mut Tape<'_>, rationale: Var, attention: Var) -> Result<Var> {
    Ok(js_divergence(tape, rationale, attention)?)
}

/// The four per-example pieces of the A2R objective.
///
/// `js_rationale` sees the attention output as a constant and `js_attention`
/// sees the rationale output as a constant.
#[derive(Debug, Clone, Copy)]
pub struct A2rTerms {
    pub ce_rationale: Var,
    pub ce_attention: Var,
    pub js_rationale: Var,
    pub js_attention: Var,
}

pub fn a2r_terms(
    tape: &mut Tape<'_>,
    rationale: Var,
    attention: Var,
    label: usize,
) -> Result<A2rTerms> {
    let ce_rationale = loss_rationale(tape, rationale, label)?;
    let ce_attention = loss_attention(tape, attention, label)?;
    let frozen_attention = tape.detach(attention);
    let frozen_rationale = tape.detach(rationale);
    let js_rationale = loss_js(tape, rationale, frozen_attention)?;
    let js_attention = loss_js(tape, frozen_rationale, attention)?;
    Ok(A2rTerms {
        ce_rationale,
        ce_attention,
        js_rationale,
        js_attention,
    })
}

/// `L_r + lambda JS_r + L_a + lambda JS_a`.
pub fn a2r_total(tape: &mut Tape<'_>, t: &A2rTerms, lambda: f64) -> Result<Var> {
    let jr = tape.scale(t.js_rationale, lambda);
    let ja = tape.scale(t.js_attention, lambda);
    let r = tape.add(t.ce_rationale, jr)?;
    let a = tape.add(t.ce_attention, ja)?;
    Ok(tape.add(r, a)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub sparsity_pct: f64,
    pub max_spans: usize,
    pub weight: f64,
}

/// Hinge penalty from a kept fraction and a span count over `len` tokens.
pub fn sparsity_continuity_penalty(
    fraction: f64,
    spans: f64,
    len: usize,
    cfg: &PenaltyConfig,
) -> f64 {
    let over_fraction = (fraction - cfg.sparsity_pct / 100.0).max(0.0);
    let over_spans = (spans - cfg.max_spans as f64).max(0.0);
    cfg.weight * over_fraction + cfg.weight * over_spans / len as f64
}

/// Penalty for a hard token mask.
pub fn selection_penalty(flags: &[bool], cfg: &PenaltyConfig) -> f64 {
    let kept = flags.iter().filter(|f| **f).count() as f64;
    sparsity_continuity_penalty(
        kept / flags.len() as f64,
        count_spans(flags) as f64,
        flags.len(),
        cfg,
    )
}

fn hinge(tape: &mut Tape<'_>, x: Var, cap: f64) -> Result<Var> {
    if tape.value(x).item() > cap {
        let c = tape.constant(Tensor::scalar(cap));
        Ok(tape.sub(x, c)?)
    } else {
        Ok(tape.constant(Tensor::scalar(0.0)))
    }
}

/// Differentiable penalty on keep-probabilities `probs` (`1 x L`).
///
/// The expected span count is the expected number of run starts,
/// `sum_t p_t (1 - p_{t-1})`.
pub fn penalty_expected(tape: &mut Tape<'_>, probs: Var, cfg: &PenaltyConfig) -> Result<Var> {
    let len = tape.value(probs).len();
    let total = tape.sum(probs);
    let fraction = tape.scale(total, 1.0 / len as f64);
    let spans = if len > 1 {
        let col = tape.reshape(probs, &[len, 1])?;
        let prev = tape.slice_rows(col, 0, len - 1)?;
        let next = tape.slice_rows(col, 1, len)?;
        let both = tape.mul(prev, next)?;
        let both = tape.sum(both);
        tape.sub(total, both)?
    } else {
        total
    };
    let a = hinge(tape, fraction, cfg.sparsity_pct / 100.0)?;
    let b = hinge(tape, spans, cfg.max_spans as f64)?;
    let b = tape.scale(b, 1.0 / len as f64);
    let sum = tape.add(a, b)?;
    Ok(tape.scale(sum, cfg.weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ratlab_grad::{GradBuffer, ParamStore};
    use std::f64::consts::LN_2;

    const CFG: PenaltyConfig = PenaltyConfig {
        sparsity_pct: 20.0,
        max_spans: 10,
        weight: 1.0,
    };

    fn with_tape<R>(f: impl FnOnce(&mut Tape<'_>) -> R) -> R {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        f(&mut tape)
    }

    fn ce(p: Vec<f64>, label: usize, attention: bool) -> f64 {
        with_tape(|t| {
            let p = t.constant(Tensor::row(p));
            let l = if attention {
                loss_attention(t, p, label)
            } else {
                loss_rationale(t, p, label)
            }
            .unwrap();
            t.value(l).item()
        })
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(ce(vec![1.0, 0.0], 0, false), 0.0);
        assert!((ce(vec![0.5, 0.5], 1, false) - LN_2).abs() < 1e-12);
        assert!((ce(vec![0.8, 0.2], 1, false) - 1.609438).abs() < 1e-6);
        assert_eq!(ce(vec![0.0, 1.0], 1, true), 0.0);
        assert!((ce(vec![0.5, 0.5], 0, true) - LN_2).abs() < 1e-12);
        assert!((ce(vec![0.9, 0.1], 0, true) - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn js_examples() {
        let js = |p: Vec<f64>, q: Vec<f64>| {
            with_tape(|t| {
                let p = t.constant(Tensor::row(p));
                let q = t.constant(Tensor::row(q));
                let l = loss_js(t, p, q).unwrap();
                t.value(l).item()
            })
        };
        assert_eq!(js(vec![0.3, 0.7], vec![0.3, 0.7]), 0.0);
        assert!((js(vec![1.0, 0.0], vec![0.0, 1.0]) - LN_2).abs() < 1e-12);
        assert_eq!(js(vec![0.5, 0.5], vec![0.5, 0.5]), 0.0);
    }

    #[test]
    fn matching_predictions_give_no_js_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![0.3, -0.2]));
        let b = store.add("b", Tensor::row(vec![0.3, -0.2]));
        let mut tape = Tape::new(&store);
        let (pa, pb) = (tape.param(a), tape.param(b));
        let r = tape.softmax(pa, ratlab_grad::Axis::Cols);
        let at = tape.softmax(pb, ratlab_grad::Axis::Cols);
        let t = a2r_terms(&mut tape, r, at, 0).unwrap();
        let js = tape.add(t.js_rationale, t.js_attention).unwrap();
        let mut g = GradBuffer::for_store(&store);
        tape.backward(js, &mut g).unwrap();
        assert!(g
            .get(a)
            .data()
            .iter()
            .chain(g.get(b).data())
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(sparsity_continuity_penalty(0.10, 3.0, 100, &CFG), 0.0);
        assert!((sparsity_continuity_penalty(0.30, 1.0, 100, &CFG) - 0.10).abs() < 1e-12);
        assert!((sparsity_continuity_penalty(0.10, 12.0, 100, &CFG) - 0.02).abs() < 1e-12);
        let mut flags = vec![false; 100];
        for i in 0..12 {
            flags[i * 8] = true;
        }
        assert!((selection_penalty(&flags, &CFG) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn expected_penalty_on_hard_probabilities_matches_mask_penalty() {
        let flags: Vec<bool> = (0..40).map(|i| i % 3 == 0 || i < 10).collect();
        let probs: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let v = with_tape(|t| {
            let p = t.constant(Tensor::row(probs));
            let l = penalty_expected(t, p, &CFG).unwrap();
            t.value(l).item()
        });
        assert!((v - selection_penalty(&flags, &CFG)).abs() < 1e-12);
        assert!(v > 0.0);
    }
}
