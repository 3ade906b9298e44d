//! Miniature decoder-only language model: tokenizer, parameters, forward and
//! backward passes, optimizer, training loop, checkpoints and gradient check.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod params;
mod tokenize;
mod train;
mod vocab;

pub use checkpoint::{
    checkpoint_hash, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
};
pub use gradcheck::{
    analytic_gradient, compare_gradient, grad_check, grad_check_probes, probe_indices, Probe,
};
pub use model::{backward, forward, Forward};
pub use optim::{Adam, LrSchedule};
pub use params::{Arch, LayerLayout, Layout, ModelParams, Scalar};
pub use tokenize::{output_roles, output_texts, split_units, tokenize, Tokenization, Unit};
pub use train::{
    evaluate, token_losses, train, train_examples, EvalStats, HistoryRow, Precision, TrainConfig,
    TrainExample, TrainHistory,
};
pub use vocab::{build_vocab, build_vocab_from, Vocab, BOS, EOS, PAD, SEP, SPECIALS, UNK};

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("sample `{id}` has {len} tokens, exceeding the limit of {max}")]
    TooLong { id: String, len: usize, max: usize },
    #[error("architecture: {0}")]
    Arch(String),
    #[error("train config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} in batch [{}]", batch_ids.join(", "))]
    NonFinite { step: usize, batch_ids: Vec<String> },
    #[error("checkpoint architecture mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: Arch, found: Arch },
    #[error("checkpoint parse error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },
    #[error("objective: {0}")]
    Objective(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LmError>;
