use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratlab_grad::{Axis, ParamId, ParamStore, Tape, Tensor, Var, PROB_FLOOR};

use crate::data::{Example, Granularity};
use crate::embeddings::Embeddings;
use crate::error::{RatError, Result};
use crate::model::encoder::uniform;
use crate::model::{
    apply_mask, Encoder, ModelConfig, Pooling, RationaleMask, SelectionDistribution,
};
use crate::vocab::Vocab;

/// Affine map `x W + b`, optionally after a tanh layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    /// Weights and bias of the tanh layer, if any.
    pub hidden: Option<(ParamId, ParamId)>,
    pub w: ParamId,
    pub b: ParamId,
}

impl Head {
    fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Self {
        let mut input = input;
        let hidden = (hidden > 0).then(|| {
            let scale = 1.0 / (input as f64).sqrt();
            let ids = (
                store.add(
                    format!("{name}.hidden.w"),
                    uniform(rng, input, hidden, scale),
                ),
                store.add(format!("{name}.hidden.b"), Tensor::zeros(&[1, hidden])),
            );
            input = hidden;
            ids
        });
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            hidden,
            w: store.add(format!("{name}.w"), uniform(rng, input, output, scale)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, output])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut x = x;
        if let Some((hw, hb)) = self.hidden {
            let (hw, hb) = (tape.param(hw), tape.param(hb));
            let xw = tape.matmul(x, hw)?;
            let pre = tape.add(xw, hb)?;
            x = tape.tanh(pre);
        }
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w)?;
        Ok(tape.add(xw, b)?)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.hidden.map(|(w, b)| vec![w, b]).unwrap_or_default();
        ids.extend([self.w, self.b]);
        ids
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOutput {
    /// `1 x T` scores.
    pub logits: Var,
    /// `1 x T`; softmax in sentence mode, sigmoid in token mode.
    pub probs: Var,
}

/// All three players and the parameters they own.
///
/// The generator has its own encoder. Both predictors read the same
/// predictor encoder and differ in their output heads (unless tied).
#[derive(Debug, Clone)]
pub struct RationaleNet {
    config: ModelConfig,
    vocab_size: usize,
    store: ParamStore,
    gen_encoder: Encoder,
    gen_score: Head,
    pred_encoder: Encoder,
    rationale_head: Head,
    attention_head: Head,
}

impl RationaleNet {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gen_encoder = Encoder::build(
            &mut store,
            &mut rng,
            "gen",
            config.generator_encoder_kind(),
            &config,
            vocab_size,
        );
        let gen_score = Head::build(
            &mut store,
            &mut rng,
            "gen.score",
            gen_encoder.out_dim(),
            0,
            1,
        );
        let pred_encoder = Encoder::build(
            &mut store,
            &mut rng,
            "pred",
            config.encoder,
            &config,
            vocab_size,
        );
        let d = pred_encoder.out_dim();
        let rationale_head = Head::build(
            &mut store,
            &mut rng,
            "rationale.head",
            d,
            config.head_hidden,
            config.num_classes,
        );
        let attention_head = if config.tie_heads {
            rationale_head
        } else {
            Head::build(
                &mut store,
                &mut rng,
                "attention.head",
                d,
                config.head_hidden,
                config.num_classes,
            )
        };
        Ok(Self {
            config,
            vocab_size,
            store,
            gen_encoder,
            gen_score,
            pred_encoder,
            rationale_head,
            attention_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn granularity(&self) -> Granularity {
        self.config.granularity
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Swap in a parameter store with identical names and shapes.
    pub fn set_store(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len()
            || self
                .store
                .iter()
                .zip(store.iter())
                .any(|((_, na, a), (_, nb, b))| na != nb || a.shape() != b.shape())
        {
            return Err(RatError::Checkpoint(
                "parameter layout does not match the model".into(),
            ));
        }
        self.store = store;
        Ok(())
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        let mut ids = self.gen_encoder.param_ids();
        ids.extend(self.gen_score.ids());
        ids
    }

    pub fn rationale_params(&self) -> Vec<ParamId> {
        let mut ids = self.pred_encoder.param_ids();
        ids.extend(self.rationale_head.ids());
        ids
    }

    pub fn attention_params(&self) -> Vec<ParamId> {
        let mut ids = self.pred_encoder.param_ids();
        ids.extend(self.attention_head.ids());
        ids
    }

    /// Shared encoder plus both heads.
    pub fn predictor_params(&self) -> Vec<ParamId> {
        let mut ids = self.rationale_params();
        if !self.config.tie_heads {
            ids.extend(self.attention_head.ids());
        }
        ids
    }

    pub fn pred_encoder(&self) -> &Encoder {
        &self.pred_encoder
    }

    pub fn gen_encoder(&self) -> &Encoder {
        &self.gen_encoder
    }

    pub fn rationale_head(&self) -> Head {
        self.rationale_head
    }

    pub fn attention_head(&self) -> Head {
        self.attention_head
    }

    pub fn gen_score(&self) -> Head {
        self.gen_score
    }

    /// Copy pretrained rows into both embedding tables; returns the number
    /// of vocabulary entries found.
    pub fn load_embeddings(&mut self, emb: &Embeddings, vocab: &Vocab) -> Result<usize> {
        if emb.dim != self.config.emb_dim {
            return Err(RatError::Config(format!(
                "embedding file has dimension {}, model expects {}",
                emb.dim, self.config.emb_dim
            )));
        }
        let d = emb.dim;
        let mut found = 0;
        for (token, vec) in &emb.entries {
            let Some(id) = vocab.get(token) else { continue };
            if id >= self.vocab_size {
                continue;
            }
            found += 1;
            for table in [self.gen_encoder.embedding, self.pred_encoder.embedding] {
                self.store.get_mut(table).data_mut()[id * d..(id + 1) * d].copy_from_slice(vec);
            }
        }
        Ok(found)
    }

    /// `T x L` averaging matrix over segments.
    fn segment_pooling(ex: &Example) -> Tensor {
        let t = ex.num_segments();
        let len = ex.tokens.len();
        let mut data = vec![0.0; t * len];
        for i in 0..t {
            let r = ex.segment_range(i);
            let w = 1.0 / r.len() as f64;
            for j in r {
                data[i * len + j] = w;
            }
        }
        Tensor::matrix(t, len, data).expect("dimensions match")
    }

    /// Representation per selectable unit.
    fn unit_reps(&self, tape: &mut Tape<'_>, ex: &Example, states: Var) -> Result<Var> {
        match self.config.granularity {
            Granularity::Sentence => {
                let pool = tape.constant(Self::segment_pooling(ex));
                Ok(tape.matmul(pool, states)?)
            }
            Granularity::Token => Ok(states),
        }
    }

    pub fn generator_forward(&self, tape: &mut Tape<'_>, ex: &Example) -> Result<GeneratorOutput> {
        let states = self.gen_encoder.encode(tape, &ex.tokens)?;
        let reps = self.unit_reps(tape, ex, states)?;
        let scores = self.gen_score.forward(tape, reps)?;
        let n = tape.value(scores).rows();
        let logits = tape.reshape(scores, &[1, n])?;
        let probs = match self.config.granularity {
            Granularity::Sentence => tape.softmax(logits, Axis::Cols),
            Granularity::Token => tape.sigmoid(logits),
        };
        Ok(GeneratorOutput { logits, probs })
    }

    pub fn selection(&self, tape: &Tape<'_>, out: &GeneratorOutput) -> SelectionDistribution {
        SelectionDistribution {
            weights: tape.value(out.probs).data().to_vec(),
            granularity: self.config.granularity,
        }
    }

    /// `log pi(mask)` under the generator's own (unexplored) distribution.
    pub fn log_prob(
        &self,
        tape: &mut Tape<'_>,
        out: &GeneratorOutput,
        mask: &RationaleMask,
    ) -> Result<Var> {
        let n = tape.value(out.probs).len();
        if mask.len() != n {
            return Err(RatError::MaskLength {
                expected: n,
                got: mask.len(),
            });
        }
        match self.config.granularity {
            Granularity::Sentence => {
                let mut picked = mask.selected();
                let (Some(i), None) = (picked.next(), picked.next()) else {
                    return Err(RatError::Config(
                        "sentence-mode log-probability needs a one-hot mask".into(),
                    ));
                };
                let lp = tape.log_softmax(out.logits, Axis::Cols);
                Ok(tape.pick(lp, i)?)
            }
            Granularity::Token => {
                let keep = mask.as_f64();
                let drop: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
                let log_p = tape.log_clamped(out.probs, PROB_FLOOR);
                let neg = tape.scale(out.probs, -1.0);
                let one = tape.constant(Tensor::scalar(1.0));
                let q = tape.add(neg, one)?;
                let log_q = tape.log_clamped(q, PROB_FLOOR);
                let keep = tape.constant(Tensor::row(keep));
                let drop = tape.constant(Tensor::row(drop));
                let a = tape.mul(log_p, keep)?;
                let b = tape.mul(log_q, drop)?;
                let a = tape.sum(a);
                let b = tape.sum(b);
                Ok(tape.add(a, b)?)
            }
        }
    }

    /// Class distribution from a masked sequence; `visible` flags kept tokens.
    pub fn rationale_forward(
        &self,
        tape: &mut Tape<'_>,
        masked: &[usize],
        visible: &[bool],
    ) -> Result<Var> {
        let states = self.pred_encoder.encode(tape, masked)?;
        let pooled = match self.config.rationale_pooling {
            Pooling::Max => tape.max_pool(states)?,
            Pooling::Mean => {
                let kept = visible.iter().filter(|v| **v).count();
                if kept == 0 || visible.len() != masked.len() {
                    tape.mean_pool(states)?
                } else {
                    let w = visible
                        .iter()
                        .map(|&v| if v { 1.0 / kept as f64 } else { 0.0 })
                        .collect();
                    let w = tape.constant(Tensor::row(w));
                    tape.matmul(w, states)?
                }
            }
        };
        let logits = self.rationale_head.forward(tape, pooled)?;
        Ok(tape.softmax(logits, Axis::Cols))
    }

    /// Mask `ex` and run the rationale predictor on what remains.
    pub fn predict_from_mask(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        mask: &RationaleMask,
    ) -> Result<Var> {
        let masked = apply_mask(ex, mask, self.config.granularity)?;
        let visible = mask.token_flags(ex, self.config.granularity)?;
        self.rationale_forward(tape, &masked, &visible)
    }

    /// Class distribution from the full input weighted by `alpha` (`1 x T`).
    pub fn attention_forward(&self, tape: &mut Tape<'_>, ex: &Example, alpha: Var) -> Result<Var> {
        let states = self.pred_encoder.encode(tape, &ex.tokens)?;
        let reps = self.unit_reps(tape, ex, states)?;
        let n = tape.value(reps).rows();
        if tape.value(alpha).len() != n {
            return Err(RatError::MaskLength {
                expected: n,
                got: tape.value(alpha).len(),
            });
        }
        let alpha = tape.reshape(alpha, &[1, n])?;
        let weights = match self.config.granularity {
            Granularity::Sentence => alpha,
            Granularity::Token => tape.normalize(alpha)?,
        };
        let pooled = tape.matmul(weights, reps)?;
        let logits = self.attention_head.forward(tape, pooled)?;
        Ok(tape.softmax(logits, Axis::Cols))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderKind;
    use crate::vocab::MASKED;

    fn net(config: ModelConfig) -> RationaleNet {
        RationaleNet::new(config, 12, 5).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            emb_dim: 6,
            hidden: 4,
            ..ModelConfig::default()
        }
    }

    fn example() -> Example {
        Example::new(vec![3, 4, 5, 6, 7], vec![0, 2], 1, None).unwrap()
    }

    #[test]
    fn generator_output_is_on_the_simplex() {
        let n = net(small());
        let mut tape = Tape::new(n.store());
        let out = n.generator_forward(&mut tape, &example()).unwrap();
        let d = n.selection(&tape, &out);
        assert_eq!(d.len(), 2);
        d.validate().unwrap();
    }

    #[test]
    fn zero_scoring_head_is_uniform_and_single_segment_is_certain() {
        let mut n = net(small());
        let w = n.gen_score().w;
        n.store_mut().get_mut(w).fill(0.0);
        let mut tape = Tape::new(n.store());
        let out = n.generator_forward(&mut tape, &example()).unwrap();
        assert_eq!(tape.value(out.probs).data(), &[0.5, 0.5]);
        let one = Example::new(vec![3, 4], vec![0], 0, None).unwrap();
        let out = n.generator_forward(&mut tape, &one).unwrap();
        assert_eq!(tape.value(out.probs).data(), &[1.0]);
    }

    #[test]
    fn logits_ln2_zero_give_two_thirds() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let l = tape.constant(Tensor::row(vec![2f64.ln(), 0.0]));
        let p = tape.softmax(l, Axis::Cols);
        let v = tape.value(p).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12 && (v[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_output_heads_are_uniform() {
        let mut n = net(small());
        for id in n
            .rationale_head()
            .ids()
            .into_iter()
            .chain(n.attention_head().ids())
        {
            n.store_mut().get_mut(id).fill(0.0);
        }
        let ex = example();
        let mut tape = Tape::new(n.store());
        let p = n
            .predict_from_mask(&mut tape, &ex, &RationaleMask::one_hot(2, 0))
            .unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
        let alpha = tape.constant(Tensor::row(vec![0.3, 0.7]));
        let p = n.attention_forward(&mut tape, &ex, alpha).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn head_bias_one_zero_gives_e_over_e_plus_one() {
        let mut n = net(small());
        let h = n.rationale_head();
        n.store_mut().get_mut(h.w).fill(0.0);
        n.store_mut()
            .get_mut(h.b)
            .data_mut()
            .copy_from_slice(&[1.0, 0.0]);
        let mut tape = Tape::new(n.store());
        let p = n
            .rationale_forward(&mut tape, &[3, 4], &[true, true])
            .unwrap();
        let e = std::f64::consts::E;
        let v = tape.value(p).data().to_vec();
        assert!((v[0] - e / (e + 1.0)).abs() < 1e-12);
        let again = n
            .rationale_forward(&mut tape, &[3, 4], &[true, true])
            .unwrap();
        assert_eq!(tape.value(again).data(), v);
    }

    #[test]
    fn masked_out_embeddings_are_never_read() {
        let mut n = net(small());
        let ex = example();
        let mask = RationaleMask::one_hot(2, 0);
        let run = |n: &RationaleNet| {
            let mut tape = Tape::new(n.store());
            let p = n.predict_from_mask(&mut tape, &ex, &mask).unwrap();
            tape.value(p).data().to_vec()
        };
        let before = run(&n);
        let table = n.pred_encoder().embedding;
        let d = small().emb_dim;
        for tok in &ex.tokens[2..] {
            assert_ne!(*tok, MASKED);
            n.store_mut().get_mut(table).data_mut()[tok * d..(tok + 1) * d].fill(123.0);
        }
        assert_eq!(run(&n), before);
    }

    #[test]
    fn corner_attention_matches_mean_pooled_rationale() {
        let n = net(ModelConfig {
            encoder: EncoderKind::MeanPool,
            rationale_pooling: Pooling::Mean,
            tie_heads: true,
            ..small()
        });
        let ex = example();
        for corner in 0..2 {
            let mut tape = Tape::new(n.store());
            let r = n
                .predict_from_mask(&mut tape, &ex, &RationaleMask::one_hot(2, corner))
                .unwrap();
            let mut alpha = vec![0.0; 2];
            alpha[corner] = 1.0;
            let alpha = tape.constant(Tensor::row(alpha));
            let a = n.attention_forward(&mut tape, &ex, alpha).unwrap();
            for (x, y) in tape.value(r).data().iter().zip(tape.value(a).data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_segment_full_alpha_is_plain_prediction() {
        let n = net(ModelConfig {
            encoder: EncoderKind::MeanPool,
            ..small()
        });
        let ex = Example::new(vec![3, 4, 5], vec![0], 0, None).unwrap();
        let mut tape = Tape::new(n.store());
        let alpha = tape.constant(Tensor::row(vec![1.0]));
        let a = n.attention_forward(&mut tape, &ex, alpha).unwrap();
        let states = n.pred_encoder().encode(&mut tape, &ex.tokens).unwrap();
        let pooled = tape.mean_pool(states).unwrap();
        let logits = n.attention_head().forward(&mut tape, pooled).unwrap();
        let p = tape.softmax(logits, Axis::Cols);
        for (x, y) in tape.value(a).data().iter().zip(tape.value(p).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn token_mode_log_prob_matches_bernoulli() {
        let n = net(ModelConfig {
            granularity: Granularity::Token,
            ..small()
        });
        let ex = example();
        let mut tape = Tape::new(n.store());
        let out = n.generator_forward(&mut tape, &ex).unwrap();
        let p = tape.value(out.probs).data().to_vec();
        let mask = RationaleMask {
            bits: vec![true, false, false, true, true],
            source: crate::model::MaskSource::Fixed,
        };
        let lp = n.log_prob(&mut tape, &out, &mask).unwrap();
        let expected: f64 = p
            .iter()
            .zip(&mask.bits)
            .map(|(&x, &b)| if b { x.ln() } else { (1.0 - x).ln() })
            .sum();
        assert!((tape.value(lp).item() - expected).abs() < 1e-12);
    }
}
