//! Selective rationalization: a generator picks part of the input, a
//! predictor classifies from that part alone.
//!
//! The crate contains the three neural players ([`model`]), the RNP and A2R
//! training games ([`train`]), synthetic corpora with controlled sentence
//! informativeness ([`synth`]), exact and empirical landscape analysis
//! ([`theory`]), evaluation ([`metrics`]) and run orchestration
//! ([`experiment`]).

pub mod checkpoint;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod theory;
pub mod train;
pub mod vocab;

pub use data::{Dataset, Example, Granularity};
pub use error::{RatError, Result};
pub use model::{ModelConfig, RationaleNet};
pub use train::{Mode, TrainConfig};
pub use vocab::Vocab;
