use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratlab_grad::{cross_entropy, GradBuffer, OptimizerState, ParamId, Tape, Var};

use crate::data::{Example, Granularity};
use crate::error::{RatError, Result};
use crate::metrics::evaluate;
use crate::model::{sample_mask, topq_mask, RationaleMask, RationaleNet};
use crate::train::{
    a2r_terms, a2r_total, lambda_schedule, penalty_expected, A2rTerms, Mode, TrainConfig,
};

pub const TRAJECTORY_HEADER: &str = "epoch,loss_r,loss_a,loss_js,dev_acc,dev_f1,x1_pct,lambda";

/// Exponential moving average of observed losses, seeded by the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    momentum: f64,
    value: Option<f64>,
}

impl Baseline {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            value: None,
        }
    }

    /// Current value, or `fallback` before any observation.
    pub fn value_or(&self, fallback: f64) -> f64 {
        self.value.unwrap_or(fallback)
    }

    pub fn observe(&mut self, loss: f64) {
        self.value = Some(match self.value {
            None => loss,
            Some(b) => self.momentum * b + (1.0 - self.momentum) * loss,
        });
    }
}

/// Mean per-example losses over one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub examples: usize,
    pub loss_r: f64,
    pub loss_a: f64,
    pub loss_js: f64,
    pub penalty: f64,
    pub skipped: bool,
    pub skipped_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_r: Option<f64>,
    pub loss_a: Option<f64>,
    pub loss_js: Option<f64>,
    pub dev_acc: f64,
    pub dev_f1: f64,
    pub x1_pct: Option<f64>,
    pub lambda: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            opt(self.loss_r),
            opt(self.loss_a),
            opt(self.loss_js),
            self.dev_acc,
            self.dev_f1,
            opt(self.x1_pct),
            self.lambda
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trajectory: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 if no epoch ran.
    pub best_epoch: usize,
    pub skipped_batches: usize,
    pub skipped_params: usize,
}

impl TrainOutcome {
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.trajectory {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

fn optimizer(lr: f64, params: Vec<ParamId>, net: &RationaleNet) -> Result<Option<OptimizerState>> {
    if lr == 0.0 {
        return Ok(None);
    }
    Ok(Some(OptimizerState::adam(lr, params, net.store())?))
}

/// Optimizer state, sampling stream and baseline for one training run.
pub struct Trainer {
    config: TrainConfig,
    rng: ChaCha8Rng,
    baseline: Baseline,
    generator_opt: Option<OptimizerState>,
    predictor_opt: Option<OptimizerState>,
    pub skipped_batches: usize,
    pub skipped_params: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, net: &RationaleNet) -> Result<Self> {
        config.validate()?;
        let (gen_lr, pred_params) = match config.mode {
            Mode::Rnp => (config.lr_policy, net.rationale_params()),
            Mode::A2r => (config.lr_main, net.predictor_params()),
            Mode::Attention => (config.lr_main, net.attention_params()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(11);
        Ok(Self {
            generator_opt: optimizer(gen_lr, net.generator_params(), net)?,
            predictor_opt: optimizer(config.lr_main, pred_params, net)?,
            baseline: Baseline::new(config.baseline_momentum),
            rng,
            config,
            skipped_batches: 0,
            skipped_params: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn baseline(&self) -> &Baseline {
        &self.baseline
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn apply(
        &mut self,
        net: &mut RationaleNet,
        mut grads: GradBuffer,
        mut stats: StepStats,
    ) -> StepStats {
        let n = stats.examples.max(1) as f64;
        grads.scale(1.0 / n);
        for opt in [&mut self.generator_opt, &mut self.predictor_opt]
            .into_iter()
            .flatten()
        {
            stats.skipped_params += opt.step(net.store_mut(), &grads).skipped_non_finite;
        }
        self.skipped_params += stats.skipped_params;
        stats.loss_r /= n;
        stats.loss_a /= n;
        stats.loss_js /= n;
        stats.penalty /= n;
        stats
    }

    fn skip(&mut self) -> StepStats {
        self.skipped_batches += 1;
        StepStats {
            skipped: true,
            ..StepStats::default()
        }
    }

    fn draw_mask(
        &mut self,
        net: &RationaleNet,
        tape: &Tape<'_>,
        probs: crate::model::GeneratorOutput,
    ) -> Result<RationaleMask> {
        let dist = net.selection(tape, &probs);
        match self.config.q {
            Some(q) if self.config.mode != Mode::Rnp => topq_mask(&dist, q),
            _ => sample_mask(&dist, &mut self.rng, self.config.explore),
        }
    }

    /// Policy-gradient generator and cross-entropy rationale predictor.
    pub fn rnp_step(&mut self, net: &mut RationaleNet, batch: &[&Example]) -> Result<StepStats> {
        let penalty_cfg = self.config.penalty();
        let token = net.granularity() == Granularity::Token;
        let mut grads = GradBuffer::for_store(net.store());
        let mut stats = StepStats::default();
        let mut observed = Vec::with_capacity(batch.len());
        for ex in batch {
            let mut tape = Tape::new(net.store());
            let out = net.generator_forward(&mut tape, ex)?;
            let mask = self.draw_mask(net, &tape, out)?;
            let pred = net.predict_from_mask(&mut tape, ex, &mask)?;
            let ce = cross_entropy(&mut tape, pred, ex.label)?.loss;
            let loss = tape.value(ce).item();
            if !loss.is_finite() {
                return Ok(self.skip());
            }
            let advantage = loss - self.baseline.value_or(loss);
            self.baseline.observe(loss);
            observed.push(loss);
            let log_prob = net.log_prob(&mut tape, &out, &mask)?;
            let surrogate = tape.scale(log_prob, advantage);
            let mut total = tape.add(ce, surrogate)?;
            if token {
                let pen = penalty_expected(&mut tape, out.probs, &penalty_cfg)?;
                stats.penalty += tape.value(pen).item();
                total = tape.add(total, pen)?;
            }
            tape.backward(total, &mut grads)?;
            stats.loss_r += loss;
            stats.examples += 1;
        }
        Ok(self.apply(net, grads, stats))
    }

    /// One A2R step with the standard objective.
    pub fn a2r_step(
        &mut self,
        net: &mut RationaleNet,
        batch: &[&Example],
        lambda: f64,
    ) -> Result<StepStats> {
        self.a2r_step_with(net, batch, lambda, a2r_total)
    }

    /// One A2R step where `compose` turns the per-example terms into the
    /// scalar that is differentiated.
    pub fn a2r_step_with<F>(
        &mut self,
        net: &mut RationaleNet,
        batch: &[&Example],
        lambda: f64,
        compose: F,
    ) -> Result<StepStats>
    where
        F: Fn(&mut Tape<'_>, &A2rTerms, f64) -> Result<Var>,
    {
        let penalty_cfg = self.config.penalty();
        let token = net.granularity() == Granularity::Token;
        let mut grads = GradBuffer::for_store(net.store());
        let mut stats = StepStats::default();
        for ex in batch {
            let mut tape = Tape::new(net.store());
            let out = net.generator_forward(&mut tape, ex)?;
            let mask = self.draw_mask(net, &tape, out)?;
            let rationale = net.predict_from_mask(&mut tape, ex, &mask)?;
            let attention = net.attention_forward(&mut tape, ex, out.probs)?;
            let terms = a2r_terms(&mut tape, rationale, attention, ex.label)?;
            let mut total = compose(&mut tape, &terms, lambda)?;
            if !tape.value(total).item().is_finite() {
                return Ok(self.skip());
            }
            if token {
                let pen = penalty_expected(&mut tape, out.probs, &penalty_cfg)?;
                stats.penalty += tape.value(pen).item();
                total = tape.add(total, pen)?;
            }
            tape.backward(total, &mut grads)?;
            stats.loss_r += tape.value(terms.ce_rationale).item();
            stats.loss_a += tape.value(terms.ce_attention).item();
            stats.loss_js += tape.value(terms.js_attention).item();
            stats.examples += 1;
        }
        Ok(self.apply(net, grads, stats))
    }

    /// Generator and attention predictor trained on the attention loss alone.
    pub fn attention_step(
        &mut self,
        net: &mut RationaleNet,
        batch: &[&Example],
    ) -> Result<StepStats> {
        let penalty_cfg = self.config.penalty();
        let token = net.granularity() == Granularity::Token;
        let mut grads = GradBuffer::for_store(net.store());
        let mut stats = StepStats::default();
        for ex in batch {
            let mut tape = Tape::new(net.store());
            let out = net.generator_forward(&mut tape, ex)?;
            let attention = net.attention_forward(&mut tape, ex, out.probs)?;
            let mut total = cross_entropy(&mut tape, attention, ex.label)?.loss;
            let loss = tape.value(total).item();
            if !loss.is_finite() {
                return Ok(self.skip());
            }
            if token {
                let pen = penalty_expected(&mut tape, out.probs, &penalty_cfg)?;
                stats.penalty += tape.value(pen).item();
                total = tape.add(total, pen)?;
            }
            tape.backward(total, &mut grads)?;
            stats.loss_a += loss;
            stats.examples += 1;
        }
        Ok(self.apply(net, grads, stats))
    }

    pub fn step(
        &mut self,
        net: &mut RationaleNet,
        batch: &[&Example],
        lambda: f64,
    ) -> Result<StepStats> {
        match self.config.mode {
            Mode::Rnp => self.rnp_step(net, batch),
            Mode::A2r => self.a2r_step(net, batch, lambda),
            Mode::Attention => self.attention_step(net, batch),
        }
    }
}

/// Run `config.epochs` epochs, then restore the parameters of the epoch with
/// the best dev accuracy (ties keep the earlier epoch).
pub fn train(
    net: &mut RationaleNet,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(RatError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(RatError::EmptySplit("dev"));
    }
    if net.config() != &config.model {
        return Err(RatError::Config(
            "model was built from a different model config".into(),
        ));
    }
    let mut trainer = Trainer::new(config.clone(), net)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(12);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trajectory = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ratlab_grad::ParamStore)> = None;
    for epoch in 1..=config.epochs {
        let lambda = lambda_schedule(config, epoch);
        order.shuffle(&mut order_rng);
        let (mut lr, mut la, mut lj, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let s = trainer.step(net, &batch, lambda)?;
            if !s.skipped {
                let k = s.examples as f64;
                lr += s.loss_r * k;
                la += s.loss_a * k;
                lj += s.loss_js * k;
                n += s.examples;
            }
        }
        let eval = evaluate(net, dev, config.q)?;
        let mean = |x: f64| if n > 0 { x / n as f64 } else { f64::NAN };
        let (loss_r, loss_a, loss_js) = match config.mode {
            Mode::Rnp => (Some(mean(lr)), None, None),
            Mode::A2r => (Some(mean(lr)), Some(mean(la)), Some(mean(lj))),
            Mode::Attention => (None, Some(mean(la)), None),
        };
        trajectory.push(EpochRecord {
            epoch,
            loss_r,
            loss_a,
            loss_js,
            dev_acc: eval.report.accuracy,
            dev_f1: eval.report.f1,
            x1_pct: eval.report.x1_pct,
            lambda,
        });
        if best
            .as_ref()
            .is_none_or(|(acc, _, _)| eval.report.accuracy > *acc)
        {
            best = Some((eval.report.accuracy, epoch, net.store().clone()));
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            net.set_store(store)?;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        trajectory,
        best_epoch,
        skipped_batches: trainer.skipped_batches,
        skipped_params: trainer.skipped_params,
    })
}

/// Train only the rationale predictor for `epochs` epochs on inputs where
/// every segment except `slot` is masked. The generator is untouched.
pub fn skew_pretrain(
    net: &mut RationaleNet,
    train: &[Example],
    epochs: usize,
    slot: usize,
    config: &TrainConfig,
) -> Result<()> {
    if net.granularity() != Granularity::Sentence {
        return Err(RatError::Granularity {
            model: net.granularity().to_string(),
            data: "skew pre-training needs sentence".into(),
        });
    }
    if let Some(ex) = train.iter().find(|e| e.num_segments() <= slot) {
        return Err(RatError::Example(format!(
            "skew slot {slot} but an example has {} segments",
            ex.num_segments()
        )));
    }
    if epochs == 0 || config.lr_main == 0.0 {
        return Ok(());
    }
    let mut opt = OptimizerState::adam(config.lr_main, net.rationale_params(), net.store())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(13);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = GradBuffer::for_store(net.store());
            for &i in chunk {
                let ex = &train[i];
                let mut tape = Tape::new(net.store());
                let mask = RationaleMask::one_hot(ex.num_segments(), slot);
                let pred = net.predict_from_mask(&mut tape, ex, &mask)?;
                let ce = cross_entropy(&mut tape, pred, ex.label)?.loss;
                tape.backward(ce, &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(net.store_mut(), &grads);
        }
    }
    Ok(())
}

/// Mean rationale-predictor cross-entropy when only `slot` is kept.
pub fn mean_slot_loss(net: &RationaleNet, examples: &[Example], slot: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(RatError::EmptySplit("evaluation"));
    }
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(net.store());
        let pred = net.predict_from_mask(
            &mut tape,
            ex,
            &RationaleMask::one_hot(ex.num_segments(), slot),
        )?;
        let ce = cross_entropy(&mut tape, pred, ex.label)?.loss;
        total += tape.value(ce).item();
    }
    Ok(total / examples.len() as f64)
}
