use mtad_core::corpus::CorpusError;
use mtad_core::decode::DecodeError;
use mtad_core::eval::DistanceError;
use mtad_core::lm::LmError;
use mtad_core::sim::SimError;
use mtad_core::types::JsonlError;
use mtad_core::ProfileError;
use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::InvalidConfig(m) => CliError::Config(m),
            LmError::UnknownLabel(m) => CliError::Usage(format!("unknown model label `{m}`")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Distribution(_) => CliError::Internal(e.to_string()),
            DecodeError::VocabularyMismatch(..) | DecodeError::ModelVocabularyMismatch(..) => {
                CliError::Data(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Decode(d) => d.into(),
            SimError::UnknownMethod(_) | SimError::Unsupported { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DistanceError> for CliError {
    fn from(e: DistanceError) -> Self {
        match e {
            DistanceError::EmptySample => CliError::Data(e.to_string()),
            DistanceError::NonFinite => CliError::Internal(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
