use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratlab_grad::{cross_entropy, GradBuffer, OptimizerState, Tape, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Granularity};
use crate::error::{RatError, Result};
use crate::model::{
    sample_mask, EncoderKind, ModelConfig, Pooling, RationaleMask, RationaleNet,
    SelectionDistribution,
};
use crate::theory::{LandscapeGrid, LandscapeKind};

/// Predictor and optimizer used at every grid point of an empirical sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricalSetup {
    pub model: ModelConfig,
    /// Training epochs per grid point.
    pub budget: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Independent initializations per point (seeds `seed..seed + restarts`);
    /// the lowest final loss is kept as the estimate of the optimum.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmpiricalSetup {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                emb_dim: 8,
                hidden: 8,
                encoder: EncoderKind::MeanPool,
                rationale_pooling: Pooling::Mean,
                tie_heads: true,
                head_hidden: 16,
                embedding_scale: 3.0,
                ..ModelConfig::default()
            },
            budget: 60,
            lr: 3e-2,
            batch_size: 32,
            restarts: 3,
            seed: 0,
        }
    }
}

fn point_loss(
    net: &RationaleNet,
    tape: &mut Tape<'_>,
    ex: &Example,
    g: f64,
    kind: LandscapeKind,
    mask: Option<&RationaleMask>,
) -> Result<Option<ratlab_grad::Var>> {
    let pred = match kind {
        LandscapeKind::RationaleEmpirical => match mask {
            Some(m) => net.predict_from_mask(tape, ex, m)?,
            None => return Ok(None),
        },
        _ => {
            let alpha = tape.constant(Tensor::row(vec![g, 1.0 - g]));
            net.attention_forward(tape, ex, alpha)?
        }
    };
    Ok(Some(cross_entropy(tape, pred, ex.label)?.loss))
}

/// Expected loss under the fixed selection `[g, 1 - g]`.
fn expected_loss(
    net: &RationaleNet,
    examples: &[Example],
    g: f64,
    kind: LandscapeKind,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(net.store());
        if kind == LandscapeKind::RationaleEmpirical {
            for (slot, w) in [(0, g), (1, 1.0 - g)] {
                if w == 0.0 {
                    continue;
                }
                let m = RationaleMask::one_hot(2, slot);
                let l = point_loss(net, &mut tape, ex, g, kind, Some(&m))?.expect("mask given");
                total += w * tape.value(l).item();
            }
        } else {
            let l =
                point_loss(net, &mut tape, ex, g, kind, None)?.expect("attention needs no mask");
            total += tape.value(l).item();
        }
    }
    Ok(total / examples.len() as f64)
}

fn run_point(
    examples: &[Example],
    vocab_size: usize,
    g: f64,
    setup: &EmpiricalSetup,
    kind: LandscapeKind,
) -> Result<f64> {
    let mut best = f64::NAN;
    for r in 0..setup.restarts as u64 {
        let l = run_once(
            examples,
            vocab_size,
            g,
            setup,
            kind,
            setup.seed.wrapping_add(r),
        )?;
        // f64::min ignores NaN, so a point fails only if every restart does
        best = best.min(l);
    }
    Ok(best)
}

fn run_once(
    examples: &[Example],
    vocab_size: usize,
    g: f64,
    setup: &EmpiricalSetup,
    kind: LandscapeKind,
    seed: u64,
) -> Result<f64> {
    let mut net = RationaleNet::new(setup.model.clone(), vocab_size, seed)?;
    // zero output layers: every point starts from the uniform prediction
    for head in [net.rationale_head(), net.attention_head()] {
        for id in [head.w, head.b] {
            net.store_mut().get_mut(id).fill(0.0);
        }
    }
    let params = match kind {
        LandscapeKind::RationaleEmpirical => net.rationale_params(),
        _ => net.attention_params(),
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(21);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
    mask_rng.set_stream(22);
    let dist = SelectionDistribution {
        weights: vec![g, 1.0 - g],
        granularity: Granularity::Sentence,
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if setup.budget > 0 {
        let mut opt = OptimizerState::adam(setup.lr, params, net.store())?;
        for _ in 0..setup.budget {
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(setup.batch_size) {
                let mut grads = GradBuffer::for_store(net.store());
                for &i in chunk {
                    let ex = &examples[i];
                    let mask = match kind {
                        LandscapeKind::RationaleEmpirical => {
                            Some(sample_mask(&dist, &mut mask_rng, 0.0)?)
                        }
                        _ => None,
                    };
                    let mut tape = Tape::new(net.store());
                    let l = point_loss(&net, &mut tape, ex, g, kind, mask.as_ref())?
                        .expect("loss built");
                    if !tape.value(l).item().is_finite() {
                        return Ok(f64::NAN);
                    }
                    tape.backward(l, &mut grads)?;
                }
                grads.scale(1.0 / chunk.len() as f64);
                opt.step(net.store_mut(), &grads);
            }
        }
    }
    expected_loss(&net, examples, g, kind)
}

/// Train a fresh predictor against the constant selection `[g, 1 - g]` at
/// every grid point and record its final training loss.
///
/// Grid points run in parallel; each starts from the same initialization.
/// Points whose training turns non-finite are marked failed.
pub fn empirical_landscape(
    examples: &[Example],
    vocab_size: usize,
    grid: &[f64],
    setup: &EmpiricalSetup,
    kind: LandscapeKind,
) -> Result<LandscapeGrid> {
    if !matches!(
        kind,
        LandscapeKind::RationaleEmpirical | LandscapeKind::AttentionEmpirical
    ) {
        return Err(RatError::Config(format!(
            "{kind} is not an empirical landscape"
        )));
    }
    if setup.model.granularity != Granularity::Sentence {
        return Err(RatError::Config(
            "empirical landscapes need sentence granularity".into(),
        ));
    }
    if examples.is_empty() {
        return Err(RatError::EmptySplit("train"));
    }
    if examples.iter().any(|e| e.num_segments() != 2) {
        return Err(RatError::Config(
            "empirical landscapes need exactly two segments per example".into(),
        ));
    }
    if !(setup.lr > 0.0 && setup.batch_size > 0 && setup.restarts > 0) {
        return Err(RatError::Config(
            "landscape lr, batch size and restarts must be positive".into(),
        ));
    }
    crate::theory::validate_grid(grid)?;
    let results: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&g| run_point(examples, vocab_size, g, setup, kind))
        .collect();
    let mut losses = Vec::with_capacity(grid.len());
    let mut failed = Vec::with_capacity(grid.len());
    for r in results {
        let l = r?;
        failed.push(!l.is_finite());
        losses.push(l);
    }
    LandscapeGrid::with_failures(grid.to_vec(), losses, failed, kind)
}
