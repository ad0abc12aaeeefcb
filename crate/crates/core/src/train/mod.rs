//! Training objectives and loops for the cooperative rationalization game.

mod objectives;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{RatError, Result};
use crate::model::ModelConfig;

pub use objectives::{
    a2r_terms, a2r_total, loss_attention, loss_js, loss_rationale, penalty_expected,
    selection_penalty, sparsity_continuity_penalty, A2rTerms, PenaltyConfig,
};
pub use trainer::{
    mean_slot_loss, skew_pretrain, train, Baseline, EpochRecord, StepStats, TrainOutcome, Trainer,
    TRAJECTORY_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Generator trained by policy gradient against a rationale predictor.
    #[default]
    Rnp,
    /// Soft attention drives both predictors, tied by a JS term.
    A2r,
    /// Generator and attention predictor only.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// Linear from 0 at `start` to the configured value at `end` (epochs).
    Ramp { start: usize, end: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero freezes the corresponding parameters.
    pub lr_main: f64,
    pub lr_policy: f64,
    pub explore: f64,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    /// Percent of units kept by top-q selection; `None` samples one unit.
    pub q: Option<f64>,
    pub sparsity_pct: f64,
    pub max_spans: usize,
    pub constraint_weight: f64,
    pub baseline_momentum: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rnp,
            epochs: 50,
            batch_size: 32,
            lr_main: 1e-3,
            lr_policy: 1e-4,
            explore: 0.2,
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::Constant,
            q: None,
            sparsity_pct: 20.0,
            max_spans: 10,
            constraint_weight: 1.0,
            baseline_momentum: 0.9,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RatError::Config(m.into()));
        let rate = |x: f64| x.is_finite() && x >= 0.0;
        if !rate(self.lr_main) || !rate(self.lr_policy) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.explore) {
            return bad("explore must lie in [0, 1]");
        }
        if !rate(self.lambda) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.sparsity_pct > 0.0 && self.sparsity_pct <= 100.0) {
            return bad("sparsity_pct must lie in (0, 100]");
        }
        if !rate(self.constraint_weight) {
            return bad("constraint_weight must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return bad("baseline_momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if let Some(q) = self.q {
            if !(q > 0.0 && q <= 100.0) {
                return bad("q must lie in (0, 100]");
            }
        }
        if let LambdaSchedule::Ramp { start, end } = self.lambda_schedule {
            if end <= start {
                return bad("lambda ramp must end after it starts");
            }
        }
        self.model.validate()
    }

    pub fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            sparsity_pct: self.sparsity_pct,
            max_spans: self.max_spans,
            weight: self.constraint_weight,
        }
    }
}

/// Lambda in effect during 1-based `epoch`.
pub fn lambda_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    match config.lambda_schedule {
        LambdaSchedule::Constant => config.lambda,
        LambdaSchedule::Ramp { start, end } => {
            let t = (epoch as f64 - start as f64) / (end - start) as f64;
            (t * config.lambda).clamp(0.0, config.lambda)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lambda_schedule(&c, 0), 1.0);
        assert_eq!(lambda_schedule(&c, 37), 1.0);
        let r = TrainConfig {
            lambda_schedule: LambdaSchedule::Ramp { start: 0, end: 10 },
            ..c
        };
        assert_eq!(lambda_schedule(&r, 0), 0.0);
        assert_eq!(lambda_schedule(&r, 5), 0.5);
        assert_eq!(lambda_schedule(&r, 10), 1.0);
        assert_eq!(lambda_schedule(&r, 15), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                lr_main: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                sparsity_pct: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                explore: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                q: Some(0.0),
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_json_uses_defaults_for_missing_keys() {
        let c: TrainConfig = serde_json::from_str(
            r#"{"mode":"a2r","lambda_schedule":{"kind":"ramp","start":0,"end":10}}"#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::A2r);
        assert_eq!(c.lr_policy, 1e-4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda":1}"#).is_err());
    }
}
