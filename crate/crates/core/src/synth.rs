//! Synthetic corpora with exactly controlled per-sentence informativeness.
//!
//! Every sentence carries one cue token at a random position among filler
//! tokens. The cue in slot `i` agrees with the label with probability
//! `predictiveness[i]`, independently across slots given the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{RatError, Result};
use crate::theory::DiscreteJoint;
use crate::vocab::Vocab;

/// How cue tokens are spelled across slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CueLayout {
    /// Each slot has its own pair of cue tokens.
    #[default]
    Disjoint,
    /// All slots use the same pair with the same meaning.
    Shared,
    /// All slots use the same pair, with the meaning swapped on odd slots.
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub predictiveness: Vec<f64>,
    pub sentence_len: usize,
    pub num_fillers: usize,
    pub layout: CueLayout,
    /// Interchangeable spellings per cue; more spellings make a cue slower
    /// to learn without changing its information content.
    pub cue_variants: usize,
    pub gold_slot: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train: 2000,
            dev: 500,
            test: 500,
            predictiveness: vec![1.0, 0.8],
            sentence_len: 4,
            num_fillers: 8,
            layout: CueLayout::Disjoint,
            cue_variants: 1,
            gold_slot: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn slots(&self) -> usize {
        self.predictiveness.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RatError::Config(m));
        if self.predictiveness.is_empty() {
            return bad("predictiveness needs at least one slot".into());
        }
        if let Some(p) = self
            .predictiveness
            .iter()
            .find(|p| !(0.5..=1.0).contains(*p))
        {
            return bad(format!("predictiveness {p} outside [0.5, 1]"));
        }
        if self.gold_slot >= self.slots() {
            return bad(format!(
                "gold slot {} but only {} slots",
                self.gold_slot,
                self.slots()
            ));
        }
        let max = self.predictiveness.iter().cloned().fold(f64::MIN, f64::max);
        if self.predictiveness[self.gold_slot] < max {
            return bad("gold slot must be the most predictive".into());
        }
        if self.cue_variants == 0 {
            return bad("cue_variants must be positive".into());
        }
        if self.sentence_len == 0 {
            return bad("sentence_len must be positive".into());
        }
        if self.sentence_len > 1 && self.num_fillers == 0 {
            return bad("sentences longer than one token need fillers".into());
        }
        Ok(())
    }

    /// Cue token spelling for `class` in `slot`.
    pub fn cue_token(&self, slot: usize, class: usize) -> String {
        match self.layout {
            CueLayout::Disjoint => format!("s{slot}_cue{class}"),
            CueLayout::Shared => format!("cue{class}"),
            CueLayout::Flipped => format!("cue{}", class ^ (slot % 2)),
        }
    }

    /// One of the `cue_variants` spellings of a cue.
    pub fn cue_variant(&self, slot: usize, class: usize, variant: usize) -> String {
        let base = self.cue_token(slot, class);
        if self.cue_variants == 1 {
            base
        } else {
            format!("{base}_{variant}")
        }
    }

    fn filler(i: usize) -> String {
        format!("w{i}")
    }

    fn vocab(&self) -> Vocab {
        let mut v = Vocab::new();
        for slot in 0..self.slots() {
            for class in 0..2 {
                for variant in 0..self.cue_variants {
                    v.intern(&self.cue_variant(slot, class, variant));
                }
            }
        }
        for i in 0..self.num_fillers {
            v.intern(&Self::filler(i));
        }
        v
    }
}

fn gen_split(spec: &SynthSpec, vocab: &Vocab, n: usize, stream: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let fillers: Vec<usize> = (0..spec.num_fillers)
        .map(|i| vocab.id(&SynthSpec::filler(i)))
        .collect();
    let len = spec.sentence_len;
    (0..n)
        .map(|_| {
            let label = usize::from(rng.gen_bool(0.5));
            let mut tokens = Vec::with_capacity(len * spec.slots());
            let mut segments = Vec::with_capacity(spec.slots());
            for (slot, &p) in spec.predictiveness.iter().enumerate() {
                segments.push(tokens.len());
                let class = if rng.gen_bool(p) { label } else { 1 - label };
                let variant = if spec.cue_variants > 1 {
                    rng.gen_range(0..spec.cue_variants)
                } else {
                    0
                };
                let cue = vocab.id(&spec.cue_variant(slot, class, variant));
                let at = rng.gen_range(0..len);
                for pos in 0..len {
                    if pos == at {
                        tokens.push(cue);
                    } else {
                        tokens.push(fillers[rng.gen_range(0..fillers.len())]);
                    }
                }
            }
            let gold_start = spec.gold_slot * len;
            Example::new(
                tokens,
                segments,
                label,
                Some(vec![(gold_start, gold_start + len)]),
            )
            .expect("generated examples are well formed")
        })
        .collect()
}

/// Generate train/dev/test splits; each split draws from its own rng stream.
pub fn gen_synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocab();
    Ok(Dataset {
        train: gen_split(spec, &vocab, spec.train, 1),
        dev: gen_split(spec, &vocab, spec.dev, 2),
        test: gen_split(spec, &vocab, spec.test, 3),
        vocab,
    })
}

/// Exact joint of a cue-only corpus over (cue per slot, label).
///
/// Position `t` takes values indexed by the class its cue token spells, so
/// symbol names are the cue tokens themselves.
pub fn to_discrete(spec: &SynthSpec) -> Result<DiscreteJoint> {
    spec.validate()?;
    if spec.sentence_len != 1 || spec.cue_variants != 1 {
        return Err(RatError::Config(
            "to_discrete needs a cue-only corpus (sentence_len = 1, cue_variants = 1)".into(),
        ));
    }
    let alphabets: Vec<Vec<String>> = (0..spec.slots())
        .map(|slot| (0..2).map(|c| spec.cue_token(slot, c)).collect())
        .collect();
    let flip: Vec<usize> = (0..spec.slots())
        .map(|slot| usize::from(spec.layout == CueLayout::Flipped && slot % 2 == 1))
        .collect();
    DiscreteJoint::from_fn(alphabets, 2, |values, y| {
        let mut p = 0.5;
        for (slot, &v) in values.iter().enumerate() {
            // Symbol index v is the spelling; the class it stands for in this slot:
            let class = v ^ flip[slot];
            let agree = spec.predictiveness[slot];
            p *= if class == y { agree } else { 1.0 - agree };
        }
        p
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    pub alpha: f64,
    pub positive_token: String,
    pub negative_token: String,
    pub apply_to_test: bool,
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            positive_token: ",".into(),
            negative_token: ".".into(),
            apply_to_test: true,
        }
    }
}

pub const BIAS_META_KEY: &str = "injected_token";

fn bias_example(ex: &mut Example, token: usize, name: &str) {
    ex.tokens.insert(0, token);
    for s in ex.segments.iter_mut().skip(1) {
        *s += 1;
    }
    if let Some(spans) = &mut ex.gold_spans {
        for (s, e) in spans.iter_mut() {
            *s += 1;
            *e += 1;
        }
    }
    ex.meta.insert(BIAS_META_KEY.into(), name.into());
}

/// Prepend a label-correlated punctuation token to the first segment.
///
/// With probability `alpha` the token matches the label (positive token for
/// label 1, negative token for label 0), otherwise the opposite one.
pub fn inject_bias(data: &Dataset, spec: &BiasSpec, rng: &mut impl Rng) -> Result<Dataset> {
    if !(spec.alpha > 0.5 && spec.alpha < 1.0) {
        return Err(RatError::Config(format!(
            "bias alpha {} outside (0.5, 1)",
            spec.alpha
        )));
    }
    if let Some(ex) = data
        .train
        .iter()
        .chain(&data.dev)
        .chain(&data.test)
        .find(|e| e.label > 1)
    {
        return Err(RatError::NonBinaryLabel(ex.label));
    }
    let mut out = data.clone();
    let pos = out.vocab.intern(&spec.positive_token);
    let neg = out.vocab.intern(&spec.negative_token);
    let mut apply = |split: &mut Vec<Example>| {
        for ex in split.iter_mut() {
            let matches = rng.gen_bool(spec.alpha);
            let positive = (ex.label == 1) == matches;
            if positive {
                bias_example(ex, pos, &spec.positive_token);
            } else {
                bias_example(ex, neg, &spec.negative_token);
            }
        }
    };
    apply(&mut out.train);
    apply(&mut out.dev);
    if spec.apply_to_test {
        apply(&mut out.test);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::oracle_conditional_entropy;

    fn spec(p: Vec<f64>, n: usize) -> SynthSpec {
        SynthSpec {
            train: n,
            dev: 50,
            test: 50,
            predictiveness: p,
            ..SynthSpec::default()
        }
    }

    fn cue_class(spec: &SynthSpec, vocab: &Vocab, ex: &Example, slot: usize) -> usize {
        let r = ex.segment_range(slot);
        for c in 0..2 {
            let id = vocab.id(&spec.cue_token(slot, c));
            if ex.tokens[r.clone()].contains(&id) {
                return c;
            }
        }
        panic!("no cue in slot {slot}");
    }

    #[test]
    fn slot_one_cue_decodes_every_label() {
        let s = spec(vec![1.0, 0.8], 1000);
        let d = gen_synth(&s).unwrap();
        assert!(d
            .train
            .iter()
            .all(|ex| cue_class(&s, &d.vocab, ex, 0) == ex.label));
    }

    #[test]
    fn slot_two_agreement_is_near_point_eight() {
        let s = spec(vec![1.0, 0.8], 1000);
        let d = gen_synth(&s).unwrap();
        let agree = d
            .train
            .iter()
            .filter(|ex| cue_class(&s, &d.vocab, ex, 1) == ex.label)
            .count();
        let frac = agree as f64 / 1000.0;
        assert!((frac - 0.8).abs() <= 0.04, "{frac}");
    }

    #[test]
    fn uninformative_slots_carry_no_information() {
        let s = spec(vec![1.0, 0.5], 10_000);
        let d = gen_synth(&s).unwrap();
        let mut counts = [[0f64; 2]; 2];
        for ex in &d.train {
            counts[cue_class(&s, &d.vocab, ex, 1)][ex.label] += 1.0;
        }
        let n = 10_000.0;
        let mut mi = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                let pxy = counts[x][y] / n;
                let px = (counts[x][0] + counts[x][1]) / n;
                let py = (counts[0][y] + counts[1][y]) / n;
                if pxy > 0.0 {
                    mi += pxy * (pxy / (px * py)).ln();
                }
            }
        }
        assert!(mi < 0.01, "{mi}");
    }

    #[test]
    fn generation_is_deterministic_and_splits_differ() {
        let s = spec(vec![1.0, 0.8], 200);
        assert_eq!(gen_synth(&s).unwrap(), gen_synth(&s).unwrap());
        let d = gen_synth(&s).unwrap();
        assert_ne!(d.train[..50], d.dev[..]);
    }

    #[test]
    fn flipped_layout_swaps_meaning_on_odd_slots() {
        let s = SynthSpec {
            layout: CueLayout::Flipped,
            ..spec(vec![1.0, 1.0], 100)
        };
        let d = gen_synth(&s).unwrap();
        let c0 = d.vocab.id("cue0");
        for ex in &d.train {
            let first = ex.tokens[ex.segment_range(0)].contains(&c0);
            let second = ex.tokens[ex.segment_range(1)].contains(&c0);
            assert_ne!(first, second);
        }
    }

    #[test]
    fn gold_must_be_most_predictive() {
        let s = SynthSpec {
            gold_slot: 1,
            ..spec(vec![1.0, 0.8], 10)
        };
        assert!(gen_synth(&s).is_err());
        assert!(gen_synth(&spec(vec![1.2], 10)).is_err());
    }

    #[test]
    fn discrete_joint_matches_construction() {
        let s = SynthSpec {
            sentence_len: 1,
            ..spec(vec![1.0, 0.8], 10)
        };
        let j = to_discrete(&s).unwrap();
        assert!((j.total() - 1.0).abs() < 1e-12);
        // P(X2 = cue1 | Y = 1) = 0.8
        let p_y1: f64 = j
            .iter()
            .filter(|(_, y, _)| *y == 1)
            .map(|(_, _, p)| p)
            .sum();
        let p_x2c_y1: f64 = j
            .iter()
            .filter(|(v, y, _)| *y == 1 && v[1] == 1)
            .map(|(_, _, p)| p)
            .sum();
        assert!((p_x2c_y1 / p_y1 - 0.8).abs() < 1e-12);

        let half = SynthSpec {
            sentence_len: 1,
            ..spec(vec![0.5], 10)
        };
        let j = to_discrete(&half).unwrap();
        assert!((oracle_conditional_entropy(&j, &[0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(to_discrete(&spec(vec![1.0], 10)).is_err());
    }

    #[test]
    fn discrete_marginals_match_generated_frequencies() {
        for layout in [CueLayout::Disjoint, CueLayout::Flipped] {
            let s = SynthSpec {
                sentence_len: 1,
                layout,
                ..spec(vec![0.9, 0.7], 10_000)
            };
            let j = to_discrete(&s).unwrap();
            let d = gen_synth(&s).unwrap();
            for slot in 0..2 {
                let sym = d.vocab.id(&s.cue_token(slot, 1));
                let p: f64 = j
                    .iter()
                    .filter(|(v, _, _)| v[slot] == 1)
                    .map(|(_, _, p)| p)
                    .sum();
                let hits = d.train.iter().filter(|ex| ex.tokens[slot] == sym).count() as f64;
                let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
                assert!(
                    (hits - 10_000.0 * p).abs() <= 3.0 * sigma,
                    "{layout:?} slot {slot}"
                );
            }
        }
    }

    fn biased(alpha: f64, apply_to_test: bool) -> (Dataset, Dataset) {
        let s = SynthSpec {
            train: 10_000,
            ..spec(vec![0.5, 1.0, 0.5], 10_000)
        };
        let s = SynthSpec { gold_slot: 1, ..s };
        let d = gen_synth(&s).unwrap();
        let b = BiasSpec {
            alpha,
            apply_to_test,
            ..BiasSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = inject_bias(&d, &b, &mut rng).unwrap();
        (d, out)
    }

    #[test]
    fn bias_rate_matches_alpha() {
        let (_, out) = biased(0.8, true);
        let comma = out.vocab.id(",");
        let pos: Vec<&Example> = out.train.iter().filter(|e| e.label == 1).collect();
        let hits = pos.iter().filter(|e| e.tokens[0] == comma).count() as f64;
        let n = pos.len() as f64;
        let sigma = (n * 0.8 * 0.2).sqrt();
        assert!((hits - 0.8 * n).abs() <= 3.0 * sigma);
    }

    #[test]
    fn reading_only_the_bias_token_gives_alpha_accuracy() {
        let (_, out) = biased(0.7, true);
        let comma = out.vocab.id(",");
        let correct = out
            .train
            .iter()
            .filter(|e| usize::from(e.tokens[0] == comma) == e.label)
            .count();
        let acc = correct as f64 / out.train.len() as f64;
        assert!((acc - 0.7).abs() < 0.02, "{acc}");
    }

    #[test]
    fn bias_shifts_by_one_token_and_respects_test_flag() {
        let (orig, out) = biased(0.8, false);
        assert_eq!(out.test, orig.test);
        for (a, b) in orig.train.iter().zip(&out.train) {
            assert_eq!(&b.tokens[1..], &a.tokens[..]);
            assert_eq!(b.segments[0], 0);
            assert!(a.segments[1..]
                .iter()
                .zip(&b.segments[1..])
                .all(|(x, y)| y == &(x + 1)));
            let ga = a.gold_spans.as_ref().unwrap();
            let gb = b.gold_spans.as_ref().unwrap();
            assert!(ga
                .iter()
                .zip(gb)
                .all(|(x, y)| y.0 == x.0 + 1 && y.1 == x.1 + 1));
            assert!(b.meta.contains_key(BIAS_META_KEY));
        }
    }

    #[test]
    fn bias_rejects_non_binary_labels() {
        let mut d = gen_synth(&spec(vec![1.0], 5)).unwrap();
        d.train[0].label = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            inject_bias(&d, &BiasSpec::default(), &mut rng),
            Err(RatError::NonBinaryLabel(2))
        ));
    }
}
