//! Word-level n-gram trait simulators over a grounded input format.

pub mod io;
pub mod ngram;
pub mod vocab;

use thiserror::Error;

pub use io::{load_model, load_model_sharing, save_model};
pub use ngram::{
    example_for, train, train_jts, train_sts, training_examples, ModelLabel, NGramConfig,
    NGramModel, TrainingExample,
};
pub use vocab::{
    build_input, detokenize, is_reserved, reserved_tokens, target_tokens, tokenize, InputFormat,
    TokenId, Vocabulary, BOS_TOKEN, EOS_ID, EOS_TOKEN, SYSTEM_TOKEN, UNK_ID, UNK_TOKEN, USER_TOKEN,
};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("no training examples for model `{0}`")]
    EmptyCorpus(String),
    #[error("model `{label}` cannot be trained on a `{found}` dialogue")]
    ProfileMismatch { label: String, found: String },
    #[error("unknown model label `{0}`")]
    UnknownLabel(String),
    #[error("invalid n-gram config: {0}")]
    InvalidConfig(String),
    #[error("unsupported model file: {0}")]
    Version(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
