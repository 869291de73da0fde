//! Synthetic dialogue corpus generation conditioned on user profiles.

pub mod config;
pub mod filter;
pub mod generate;
pub mod graph;
pub mod pool;
pub mod system;

use thiserror::Error;

use crate::types::Intent;

pub use config::{GenerationConfig, RepetitionProbs, RepetitionTable, Thresholds, TraitIntensityMap};
pub use filter::{
    balance_training_set, corpus_stats, corpus_stats_with, filter_corpus, next_step_retained,
    passes_filter, BalancedSet, CorpusStats, MetricStats, NEXT_STEP_RETENTION,
};
pub use generate::{generate_corpus, generate_dialogue, task_for_seed, CorpusRequest, GeneratedCorpus};
pub use graph::{
    apply_dialogue_level_traits, apply_exploration, apply_tolerance, top_k_intents,
    ExplorationDirection, IntentRow, State, TransitionGraph,
};
pub use pool::{apply_utterance_level_traits, PoolUtterance, UtterancePool, WeightedUtterance};
pub use system::{system_respond, SystemReply, FAREWELL, WRONG_RESPONSE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("transition row for state `{0}` has no probability mass left")]
    DegenerateRow(String),
    #[error("invalid transition row for state `{state}`: {reason}")]
    InvalidRow { state: String, reason: String },
    #[error("graph has no row for state `{0}`")]
    MissingRow(String),
    #[error("unknown intent or state name `{0}`")]
    UnknownName(String),
    #[error("utterance pool has no entries for intent {0}")]
    EmptyPool(Intent),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no tasks to generate dialogues for")]
    NoTasks,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
