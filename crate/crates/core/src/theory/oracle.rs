//! Full-capacity optimal losses by exact enumeration.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{RatError, Result};
use crate::theory::{DiscreteJoint, LandscapeGrid, LandscapeKind};

/// `H(Y | K)` in nats for a joint given as `(key, label, probability)` triples.
fn conditional_entropy<K: Eq + Hash>(cells: impl IntoIterator<Item = (K, usize, f64)>) -> f64 {
    let mut groups: HashMap<K, HashMap<usize, f64>> = HashMap::new();
    for (k, y, p) in cells {
        *groups.entry(k).or_default().entry(y).or_default() += p;
    }
    let mut h = 0.0;
    for by_label in groups.values() {
        let pk: f64 = by_label.values().sum();
        for &p in by_label.values() {
            if p > 0.0 {
                h -= p * (p / pk).ln();
            }
        }
    }
    h.max(0.0)
}

/// Exact `H(Y | X_visible)`.
pub fn oracle_conditional_entropy(joint: &DiscreteJoint, visible: &[usize]) -> f64 {
    conditional_entropy(joint.iter().map(|(values, y, p)| {
        let key: Vec<usize> = visible.iter().map(|&t| values[t]).collect();
        (key, y, p)
    }))
}

fn require_two(joint: &DiscreteJoint) -> Result<()> {
    if joint.num_positions() != 2 {
        return Err(RatError::Config(format!(
            "landscape oracles need two positions, joint has {}",
            joint.num_positions()
        )));
    }
    Ok(())
}

/// Optimal rationale loss for constant selection `[g, 1 - g]`.
///
/// The rationale reveals which position was kept and its value, so the
/// optimum is `H(Y | slot, X_slot)`, which is affine in `g`.
pub fn oracle_rationale_landscape(joint: &DiscreteJoint, grid: &[f64]) -> Result<LandscapeGrid> {
    require_two(joint)?;
    let losses = grid
        .iter()
        .map(|&g| {
            let pi = [g, 1.0 - g];
            conditional_entropy(joint.iter().flat_map(|(values, y, p)| {
                (0..2).map(move |slot| ((slot, values[slot]), y, pi[slot] * p))
            }))
        })
        .collect();
    LandscapeGrid::new(grid.to_vec(), losses, LandscapeKind::RationaleOracle)
}

/// Result of the pairwise same-direction test over symbol embeddings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Colinearity {
    Pass,
    /// Indices of the first offending pair (equal when a vector is zero).
    Fail(usize, usize),
}

/// Fails iff some pair of distinct symbols lies on a common ray from the
/// origin (cosine 1 within 1e-9) or some vector is zero.
pub fn check_noncolinearity(embeddings: &[Vec<f64>]) -> Colinearity {
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    for i in 0..embeddings.len() {
        if norms[i] == 0.0 {
            return Colinearity::Fail(i, i);
        }
        for j in 0..i {
            let dot: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| a * b)
                .sum();
            if (dot / (norms[i] * norms[j]) - 1.0).abs() < 1e-9 {
                return Colinearity::Fail(j, i);
            }
        }
    }
    Colinearity::Pass
}

/// Optimal attention loss `H(Y | [g e(X_1), (1 - g) e(X_2)])`.
///
/// `embeddings[t][v]` embeds symbol `v` at position `t`. Keys are compared
/// bit for bit, so interior points see both positions and corners see one.
pub fn oracle_attention_landscape(
    joint: &DiscreteJoint,
    grid: &[f64],
    embeddings: &[Vec<Vec<f64>>],
) -> Result<LandscapeGrid> {
    require_two(joint)?;
    if embeddings.len() != 2 || (0..2).any(|t| embeddings[t].len() != joint.alphabet(t).len()) {
        return Err(RatError::Config(
            "one embedding per symbol per position required".into(),
        ));
    }
    for emb in embeddings {
        if let Colinearity::Fail(a, b) = check_noncolinearity(emb) {
            return Err(RatError::Colinear(a, b));
        }
    }
    let losses = grid
        .iter()
        .map(|&g| {
            let w = [g, 1.0 - g];
            conditional_entropy(joint.iter().map(|(values, y, p)| {
                let key: Vec<u64> = (0..2)
                    .flat_map(|t| {
                        embeddings[t][values[t]]
                            .iter()
                            .map(move |&e| (w[t] * e).to_bits())
                    })
                    .map(|b| if b == (-0.0f64).to_bits() { 0 } else { b })
                    .collect();
                (key, y, p)
            }))
        })
        .collect();
    LandscapeGrid::new(grid.to_vec(), losses, LandscapeKind::AttentionOracle)
}

/// One-hot embeddings for every symbol at every position.
pub fn one_hot_embeddings(joint: &DiscreteJoint) -> Vec<Vec<Vec<f64>>> {
    (0..joint.num_positions())
        .map(|t| {
            let n = joint.alphabet(t).len();
            (0..n)
                .map(|v| (0..n).map(|k| if k == v { 1.0 } else { 0.0 }).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{to_discrete, SynthSpec};
    use crate::theory::uniform_grid;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    pub(crate) fn toy() -> DiscreteJoint {
        to_discrete(&SynthSpec {
            sentence_len: 1,
            predictiveness: vec![1.0, 0.8],
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn h2(p: f64) -> f64 {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }

    #[test]
    fn toy_entropies() {
        let j = toy();
        assert!(oracle_conditional_entropy(&j, &[0]).abs() < 1e-12);
        assert!((oracle_conditional_entropy(&j, &[1]) - 0.500402).abs() < 1e-6);
        assert!((oracle_conditional_entropy(&j, &[1]) - h2(0.2)).abs() < 1e-12);
        assert!((oracle_conditional_entropy(&j, &[]) - LN_2).abs() < 1e-12);
    }

    #[test]
    fn rationale_landscape_is_affine_between_single_position_entropies() {
        let j = toy();
        let l = oracle_rationale_landscape(&j, &[0.0, 0.5, 1.0]).unwrap();
        assert!((l.losses[0] - h2(0.2)).abs() < 1e-12);
        assert!((l.losses[1] - h2(0.2) / 2.0).abs() < 1e-12);
        assert!((l.losses[1] - 0.250201).abs() < 1e-6);
        assert!(l.losses[2].abs() < 1e-12);
    }

    #[test]
    fn attention_landscape_sees_both_positions_inside() {
        let j = toy();
        let l = oracle_attention_landscape(&j, &uniform_grid(21), &one_hot_embeddings(&j)).unwrap();
        assert!((l.losses[0] - h2(0.2)).abs() < 1e-12);
        assert!(l.losses[10].abs() < 1e-12);
        assert!(l.losses[20].abs() < 1e-12);
    }

    #[test]
    fn attention_landscape_interior_is_joint_entropy_for_noisy_joint() {
        let j = to_discrete(&SynthSpec {
            sentence_len: 1,
            predictiveness: vec![0.9, 0.7],
            ..SynthSpec::default()
        })
        .unwrap();
        let l = oracle_attention_landscape(&j, &[0.0, 0.3, 1.0], &one_hot_embeddings(&j)).unwrap();
        assert!((l.losses[1] - oracle_conditional_entropy(&j, &[0, 1])).abs() < 1e-12);
        assert!((l.losses[0] - oracle_conditional_entropy(&j, &[1])).abs() < 1e-12);
        assert!((l.losses[2] - oracle_conditional_entropy(&j, &[0])).abs() < 1e-12);
    }

    #[test]
    fn colinear_embeddings_are_rejected() {
        assert_eq!(
            check_noncolinearity(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            Colinearity::Pass
        );
        assert_eq!(
            check_noncolinearity(&[vec![1.0, 0.0], vec![2.0, 0.0]]),
            Colinearity::Fail(0, 1)
        );
        assert_eq!(
            check_noncolinearity(&[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Colinearity::Fail(1, 1)
        );
        assert_eq!(
            check_noncolinearity(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Colinearity::Pass
        );
        let j = toy();
        let bad = vec![
            vec![vec![1.0, 0.0], vec![3.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ];
        assert!(matches!(
            oracle_attention_landscape(&j, &[0.5], &bad),
            Err(RatError::Colinear(0, 1))
        ));
    }

    fn random_joint(weights: Vec<f64>) -> DiscreteJoint {
        let total: f64 = weights.iter().sum();
        let alph = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        DiscreteJoint::new(vec![alph(2), alph(3), alph(2)], 2, probs).unwrap()
    }

    proptest! {
        #[test]
        fn conditioning_on_more_never_raises_entropy(w in prop::collection::vec(0.01f64..1.0, 24)) {
            let j = random_joint(w);
            let subsets: [&[usize]; 5] = [&[], &[0], &[0, 1], &[0, 1, 2], &[1, 2]];
            let h: Vec<f64> = subsets.iter().map(|s| oracle_conditional_entropy(&j, s)).collect();
            prop_assert!(h[1] <= h[0] + 1e-12);
            prop_assert!(h[2] <= h[1] + 1e-12);
            prop_assert!(h[3] <= h[2] + 1e-12);
            prop_assert!(h[3] <= h[4] + 1e-12);
            prop_assert!(h[4] <= h[0] + 1e-12);
        }
    }
}
