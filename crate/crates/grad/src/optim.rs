use crate::error::GradError;
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer over a fixed group of parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub updated: usize,
    /// Parameters left untouched because their gradient had a NaN or Inf.
    pub skipped_non_finite: usize,
}

impl OptimizerState {
    pub fn new(
        kind: OptimizerKind,
        lr: f64,
        params: Vec<ParamId>,
        store: &ParamStore,
    ) -> Result<Self, GradError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(GradError::InvalidArgument {
                op: "optimizer",
                reason: format!("learning rate must be positive, got {lr}"),
            });
        }
        let zeros = |ids: &[ParamId]| {
            ids.iter()
                .map(|&id| Tensor::zeros(store.get(id).shape()))
                .collect()
        };
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (zeros(&params), zeros(&params)),
        };
        Ok(Self {
            kind,
            lr,
            params,
            m,
            v,
            step: 0,
        })
    }

    pub fn sgd(lr: f64, params: Vec<ParamId>, store: &ParamStore) -> Result<Self, GradError> {
        Self::new(OptimizerKind::Sgd, lr, params, store)
    }

    pub fn adam(lr: f64, params: Vec<ParamId>, store: &ParamStore) -> Result<Self, GradError> {
        Self::new(OptimizerKind::Adam, lr, params, store)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> StepStats {
        self.step += 1;
        let mut stats = StepStats::default();
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (k, &id) in self.params.iter().enumerate() {
            let g = grads.get(id);
            if !g.all_finite() {
                stats.skipped_non_finite += 1;
                continue;
            }
            let p = store.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in p.iter_mut().zip(g.data()) {
                        *w -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m[k].data_mut();
                    let v = self.v[k].data_mut();
                    for (((w, &gv), mv), vv) in p.iter_mut().zip(g.data()).zip(m).zip(v) {
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
            stats.updated += 1;
        }
        stats
    }
}
