//! Run configuration: one TOML file, every field optional.

use std::path::{Path, PathBuf};

use mtad_core::corpus::GenerationConfig;
use mtad_core::lm::NGramConfig;
use mtad_core::sim::{Method, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Transition graph JSON; the bundled graph when unset.
    pub graph: Option<PathBuf>,
    /// Utterance pool JSON; the bundled pool when unset.
    pub utterances: Option<PathBuf>,
    /// Task list JSON used for corpus generation; the bundled cooking tasks
    /// when unset.
    pub tasks: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            graph: None,
            utterances: None,
            tasks: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Named seeds. Each command draws only from its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub balance: u64,
    pub simulation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            balance: 2,
            simulation: 3,
        }
    }
}

/// Dialogues per corpus split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            valid: 100,
            test: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub method: Method,
    /// Dialogues per profile.
    pub n: usize,
    #[serde(flatten)]
    pub sim: SimConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            method: Method::Mtad,
            n: 100,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub seeds: Seeds,
    pub splits: SplitSizes,
    /// Profile specs such as `engagement=high,verbosity=low` or `regular`.
    /// Empty means Regular plus the sixteen single-trait profiles.
    pub profiles: Vec<String>,
    pub generation: GenerationConfig,
    pub ngram: NGramConfig,
    pub simulation: SimulationSettings,
    /// Worker threads; all cores when unset.
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generation.validate().map_err(CliError::Config)?;
        self.simulation.sim.decoder.validate()?;
        if self.ngram.order == 0 || self.ngram.delta.is_nan() || self.ngram.delta <= 0.0 {
            return Err(CliError::Config("ngram order must be positive and delta > 0".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}
