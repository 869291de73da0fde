//! Trait-conditioned user simulation for conversational task assistants.
//!
//! The crate covers the whole pipeline:
//!
//! * [`corpus`] builds profile-aware synthetic dialogues from an intent
//!   transition graph and utterance pools, then filters and balances them.
//! * [`lm`] trains word-level n-gram trait simulators (one per trait and
//!   intensity, plus a joint model) over a grounded input format.
//! * [`decode`] combines trait simulators at decoding time (mTAD), with a
//!   level-aware variant and a per-turn sampling baseline.
//! * [`sim`] runs closed-loop conversations against a scripted system agent.
//! * [`eval`] extracts identifying metrics and compares distributions.

pub mod assets;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod lm;
pub mod scorers;
pub mod seed;
pub mod sim;
pub mod types;

pub use types::{
    Dialogue, Domain, Intensity, Intent, IntentFlags, ProfileError, Task, TokenDistribution,
    Trait, TraitLevel, Turn, UserProfile,
};
