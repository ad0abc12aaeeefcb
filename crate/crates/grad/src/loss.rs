//! Losses on class distributions. All logarithms are natural (nats).

use crate::error::GradError;
use crate::tape::{js_value, Tape, Var};

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy {
    pub loss: Var,
    /// The labelled class had probability at or below [`PROB_FLOOR`].
    pub saturated: bool,
}

/// `-ln p[label]` for a distribution `pred` on the simplex.
pub fn cross_entropy(
    tape: &mut Tape<'_>,
    pred: Var,
    label: usize,
) -> Result<CrossEntropy, GradError> {
    let n = tape.value(pred).len();
    if label >= n {
        return Err(GradError::InvalidArgument {
            op: "cross_entropy",
            reason: format!("label {label} out of range for {n} classes"),
        });
    }
    let p = tape.pick(pred, label)?;
    let saturated = tape.value(p).item() <= PROB_FLOOR;
    let lp = tape.log_clamped(p, PROB_FLOOR);
    let loss = tape.scale(lp, -1.0);
    Ok(CrossEntropy { loss, saturated })
}

pub fn cross_entropy_value(pred: &[f64], label: usize) -> f64 {
    -pred[label].max(PROB_FLOOR).ln()
}

/// `JS(p || q) = KL(p||m)/2 + KL(q||m)/2` with `m = (p + q)/2`.
pub fn js_divergence(tape: &mut Tape<'_>, p: Var, q: Var) -> Result<Var, GradError> {
    tape.js_divergence(p, q, PROB_FLOOR)
}

pub fn js_divergence_value(p: &[f64], q: &[f64]) -> f64 {
    js_value(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{GradBuffer, ParamStore};
    use crate::tape::Axis;
    use crate::tensor::Tensor;
    use std::f64::consts::LN_2;

    fn ce(pred: Vec<f64>, label: usize) -> (f64, bool) {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.constant(Tensor::row(pred));
        let out = cross_entropy(&mut tape, p, label).unwrap();
        (tape.value(out.loss).item(), out.saturated)
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((ce(vec![0.5, 0.5], 0).0 - LN_2).abs() < 1e-15);
        assert_eq!(ce(vec![1.0, 0.0], 0).0, 0.0);
        assert!((ce(vec![0.8, 0.2], 1).0 - 1.609_437_912_434_100_3).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped_and_flagged() {
        let (loss, saturated) = ce(vec![1.0, 0.0], 1);
        assert!(saturated);
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
        assert!(!ce(vec![0.5, 0.5], 1).1);
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.constant(Tensor::row(vec![0.5, 0.5]));
        assert!(cross_entropy(&mut tape, p, 2).is_err());
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_pred_minus_onehot() {
        let mut store = ParamStore::new();
        let logits = store.add("z", Tensor::row(vec![0.3, -1.2, 0.8]));
        let mut tape = Tape::new(&store);
        let z = tape.param(logits);
        let p = tape.softmax(z, Axis::Cols);
        let pred = tape.value(p).data().to_vec();
        let l = cross_entropy(&mut tape, p, 2).unwrap().loss;
        let mut grads = GradBuffer::for_store(&store);
        tape.backward(l, &mut grads).unwrap();
        let expect = [pred[0], pred[1], pred[2] - 1.0];
        for (g, e) in grads.get(logits).data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence_value(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!((js_divergence_value(&[1.0, 0.0], &[0.0, 1.0]) - LN_2).abs() < 1e-15);
        assert_eq!(js_divergence_value(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }
}
