//! Orchestration behind the `mtad` binary.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
