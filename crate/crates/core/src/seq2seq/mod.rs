//! Bi-directional LSTM encoder with a global dot-product attention decoder.
//!
//! The model maps one token sequence to another and is used in both
//! directions: sentence to linearized frame (NLU) and frame to sentence
//! (NLG).

mod model;
mod train;
mod vocab;

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::AutodiffError;
use crate::corpus::{linearize_frame, SentencePair};

pub(crate) use model::rng_stream;
pub use model::{Batch, Forward, Seq2Seq};
pub use train::{train_model, train_supervised, EpochLog, Example, Trainer, TrainingLog};
pub use vocab::{Vocab, BOS, EOS, PAD, UNK};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Seq2SeqError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty source sequence")]
    EmptySource,
    #[error("empty {0} set")]
    EmptyDataset(&'static str),
    #[error("token index {index} outside vocabulary of size {size}")]
    IndexOutOfVocab { index: usize, size: usize },
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Encoder output and decoder state width; each encoder direction
    /// carries half of it.
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 500,
            hidden: 128,
            layers: 2,
            dropout: 0.2,
            lr: 0.001,
            clip_norm: 2.0,
            max_epochs: 70,
            batch_size: 32,
            max_decode_len: 60,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let fail = |msg: &str| Err(Seq2SeqError::InvalidConfig(msg.into()));
        if self.embed_dim == 0
            || self.layers == 0
            || self.batch_size == 0
            || self.max_decode_len == 0
        {
            return fail("dimensions, batch size and decode length must be at least 1");
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return fail("hidden must be a positive even number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !self.clip_norm.is_finite() {
            return fail("clip norm must be finite");
        }
        Ok(())
    }
}

/// A source/target token sequence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SeqPair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        Self { source, target }
    }

    /// Sentence to linearized frame.
    pub fn nlu(pair: &SentencePair) -> Self {
        Self::new(pair.source_tokens.clone(), linearize_frame(&pair.target))
    }

    /// Linearized frame to sentence.
    pub fn nlg(pair: &SentencePair) -> Self {
        Self::new(linearize_frame(&pair.target), pair.source_tokens.clone())
    }

    pub fn flipped(&self) -> Self {
        Self::new(self.target.clone(), self.source.clone())
    }
}
