//! Miniature autoregressive token policy with a hybrid attention layout:
//! decayed linear-attention blocks with one softmax-attention block every
//! `hybrid_ratio + 1` layers, and a precision-selectable output head.

pub mod attention;
mod config;
mod engine;
mod graph;
mod model;
mod params;

pub use attention::{linear_attention_forward, reference_decay_attention};
pub use config::{EvalMode, HeadPrecision, PolicyConfig, BOS_TOKEN};
pub use engine::{full_distributions, token_logprobs, Engine};
pub use graph::GraphPolicy;
pub use params::{
    init_policy, load_checkpoint, save_checkpoint, LayerParams, PolicyParams,
    CHECKPOINT_SCHEMA_VERSION,
};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("token {token} out of range for vocab size {vocab}")]
    TokenOutOfRange { token: u32, vocab: u32 },
    #[error("sequence length {len} exceeds max position {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
