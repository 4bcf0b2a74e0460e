//! A small encoder-decoder transformer for code repair with hand-written
//! backpropagation.
//!
//! Parameters live in one flat buffer ([`Model::params`]) described by a
//! [`Layout`] of named tensors, so the optimizer, checkpoints and the
//! gradient checker all treat the model as a single vector. The encoder adds
//! syntax-class embeddings to its inputs; the decoder optionally feeds an
//! auxiliary head that predicts each target token's syntax class.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod params;
pub mod train;
pub mod transformer;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use decode::Candidate;
pub use loss::LossParts;
pub use optim::OptimConfig;
pub use params::{Layout, Model};
pub use train::{Objective, StageSpec};
pub use transformer::{Example, Outputs, TrainingBatch};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("position {position} exceeds max_positions {max}")]
    PositionOverflow { position: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
