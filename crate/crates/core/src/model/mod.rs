//! Generator, rationale predictor and attention predictor.

mod encoder;
mod mask;
mod net;

use serde::{Deserialize, Serialize};

use crate::data::Granularity;
use crate::error::{RatError, Result};

pub use encoder::{Encoder, EncoderKind, GruParams};
pub use mask::{
    apply_mask, sample_mask, topq_count, topq_mask, MaskSource, RationaleMask,
    SelectionDistribution,
};
pub use net::{GeneratorOutput, Head, RationaleNet};

/// How the rationale predictor reduces token states to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Max,
    /// Mean over kept (unmasked) positions.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    /// Per direction for the recurrent encoder.
    pub hidden: usize,
    pub encoder: EncoderKind,
    /// Generator encoder when it differs from the predictors'.
    pub generator_encoder: Option<EncoderKind>,
    pub rationale_pooling: Pooling,
    /// Both predictors read through the same output head.
    pub tie_heads: bool,
    /// Width of a tanh layer in the predictor heads; 0 keeps them linear.
    pub head_hidden: usize,
    pub num_classes: usize,
    pub granularity: Granularity,
    /// Half-width of the uniform embedding init.
    pub embedding_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            emb_dim: 64,
            hidden: 32,
            encoder: EncoderKind::BiGru,
            generator_encoder: None,
            rationale_pooling: Pooling::Max,
            tie_heads: false,
            head_hidden: 0,
            num_classes: 2,
            granularity: Granularity::Sentence,
            embedding_scale: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn generator_encoder_kind(&self) -> EncoderKind {
        self.generator_encoder.unwrap_or(self.encoder)
    }

    pub fn validate(&self) -> Result<()> {
        let recurrent = self.encoder == EncoderKind::BiGru
            || self.generator_encoder_kind() == EncoderKind::BiGru;
        if self.emb_dim == 0 || (recurrent && self.hidden == 0) {
            return Err(RatError::Config("model dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(RatError::Config("need at least two classes".into()));
        }
        if !(self.embedding_scale.is_finite() && self.embedding_scale >= 0.0) {
            return Err(RatError::Config(
                "embedding_scale must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}
