use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratlab::data::Granularity;
use ratlab::metrics::{evaluate, token_prf1, x1_ratio};
use ratlab::model::{sample_mask, ModelConfig, RationaleNet, SelectionDistribution};
use ratlab::synth::{gen_synth, SynthSpec};

/// Precision, recall and F1 from index sets.
fn set_prf1(sel: &HashSet<usize>, gold: &HashSet<usize>) -> (f64, f64, f64) {
    let both = sel.intersection(gold).count() as f64;
    let p = if sel.is_empty() {
        0.0
    } else {
        both / sel.len() as f64
    };
    let r = if gold.is_empty() {
        0.0
    } else {
        both / gold.len() as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

fn to_set(flags: &[bool]) -> HashSet<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| i)
        .collect()
}

proptest! {
    #[test]
    fn prf1_matches_set_arithmetic(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
        let (sel, gold): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let got = token_prf1(&sel, &gold);
        let (p, r, f) = set_prf1(&to_set(&sel), &to_set(&gold));
        prop_assert!((got.precision - p).abs() < 1e-12);
        prop_assert!((got.recall - r).abs() < 1e-12);
        prop_assert!((got.f1 - f).abs() < 1e-12);
    }
}

#[test]
fn corpus_f1_is_the_mean_of_example_f1() {
    let data = gen_synth(&SynthSpec {
        train: 10,
        dev: 10,
        test: 60,
        predictiveness: vec![1.0, 0.8, 0.7],
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    for (granularity, q) in [
        (Granularity::Sentence, None),
        (Granularity::Token, None),
        (Granularity::Token, Some(30.0)),
    ] {
        let model = ModelConfig {
            emb_dim: 8,
            hidden: 4,
            granularity,
            ..ModelConfig::default()
        };
        let net = RationaleNet::new(model, data.vocab.len(), 4).unwrap();
        let eval = evaluate(&net, &data.test, q).unwrap();
        let mut sums = (0.0, 0.0, 0.0);
        for (ex, mask) in data.test.iter().zip(&eval.masks) {
            let flags = mask.token_flags(ex, granularity).unwrap();
            let (p, r, f) = set_prf1(&to_set(&flags), &to_set(&ex.gold_tokens().unwrap()));
            sums = (sums.0 + p, sums.1 + r, sums.2 + f);
        }
        let n = data.test.len() as f64;
        assert!((eval.report.precision - sums.0 / n).abs() < 1e-12);
        assert!((eval.report.recall - sums.1 / n).abs() < 1e-12);
        assert!((eval.report.f1 - sums.2 / n).abs() < 1e-12);
        assert_eq!(eval.report.averaging, "macro");
        assert_eq!(
            eval.report.x1_pct.is_some(),
            granularity == Granularity::Sentence
        );
        // evaluation never samples
        let again = evaluate(&net, &data.test, q).unwrap();
        assert_eq!(again.report, eval.report);
    }
}

#[test]
fn uniform_selector_picks_the_first_of_five_a_fifth_of_the_time() {
    let dist = SelectionDistribution::new(vec![0.2; 5], Granularity::Sentence).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let masks: Vec<_> = (0..10_000)
        .map(|_| sample_mask(&dist, &mut rng, 0.0).unwrap())
        .collect();
    let x1 = x1_ratio(&masks);
    assert!((x1 - 20.0).abs() < 2.0, "{x1}");
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let data = gen_synth(&SynthSpec {
        train: 4,
        dev: 4,
        test: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let net = RationaleNet::new(ModelConfig::default(), data.vocab.len(), 0).unwrap();
    assert!(evaluate(&net, &[], None).is_err());
}
