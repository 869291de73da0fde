//! Closed-loop simulation of a decoder-backed user against the scripted
//! system agent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::system_respond;
use crate::decode::{
    decode_turn, decode_turn_level_aware, decode_turn_sampling_baseline, DecodeError,
    DecoderConfig, GenerationOutput, ProfileWeights,
};
use crate::lm::{ModelLabel, NGramModel};
use crate::seed;
use crate::types::{read_jsonl, write_jsonl, Dialogue, Intent, JsonlError, Task, TraitLevel, Turn, UserProfile};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no model `{0}` is loaded")]
    MissingModel(String),
    #[error("method {method} cannot simulate profile `{profile}`: {reason}")]
    Unsupported {
        method: Method,
        profile: String,
        reason: String,
    },
    #[error("no tasks to simulate")]
    NoTasks,
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the user side picks its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// The specialized model of a single-trait profile.
    Sts,
    /// The joint model conditioned on the profile.
    Jts,
    /// One active specialized model per turn, chosen uniformly.
    Sampling,
    /// Mixture of the active specialized models at every step.
    Mtad,
    /// Intent from dialogue-level models, words from utterance-level ones.
    MtadLa,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sts, Method::Jts, Method::Sampling, Method::Mtad, Method::MtadLa];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sts => "sts",
            Method::Jts => "jts",
            Method::Sampling => "sampling",
            Method::Mtad => "mtad",
            Method::MtadLa => "mtad-la",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| SimError::UnknownMethod(s.to_string()))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Trained models by label.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    models: BTreeMap<ModelLabel, Arc<NGramModel>>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: NGramModel) {
        self.insert_arc(Arc::new(model));
    }

    pub fn insert_arc(&mut self, model: Arc<NGramModel>) {
        self.models.insert(model.label(), model);
    }

    pub fn get(&self, label: ModelLabel) -> Result<Arc<NGramModel>, SimError> {
        self.models
            .get(&label)
            .cloned()
            .ok_or_else(|| SimError::MissingModel(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = ModelLabel> + '_ {
        self.models.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Anything that can produce the next user turn.
pub trait TurnDecoder: Sync {
    fn decode(
        &self,
        history: &[Turn],
        profile: &UserProfile,
        rng: &mut ChaCha8Rng,
    ) -> Result<GenerationOutput, DecodeError>;
}

/// Decoder built for one profile under one method.
#[derive(Debug, Clone)]
pub enum UserDecoder {
    Mixture(ProfileWeights, DecoderConfig),
    LevelAware {
        dialogue: ProfileWeights,
        utterance: ProfileWeights,
        config: DecoderConfig,
    },
    Sampling(Vec<Arc<NGramModel>>, DecoderConfig),
}

impl UserDecoder {
    /// Labels of the models involved, dialogue-level mixture first for the
    /// level-aware decoder.
    pub fn labels(&self) -> Vec<ModelLabel> {
        match self {
            UserDecoder::Mixture(w, _) => w.labels(),
            UserDecoder::LevelAware {
                dialogue, utterance, ..
            } => dialogue.labels().into_iter().chain(utterance.labels()).collect(),
            UserDecoder::Sampling(models, _) => models.iter().map(|m| m.label()).collect(),
        }
    }
}

impl TurnDecoder for UserDecoder {
    fn decode(
        &self,
        history: &[Turn],
        profile: &UserProfile,
        rng: &mut ChaCha8Rng,
    ) -> Result<GenerationOutput, DecodeError> {
        match self {
            UserDecoder::Mixture(w, cfg) => decode_turn(w, history, profile, cfg, rng),
            UserDecoder::LevelAware {
                dialogue,
                utterance,
                config,
            } => decode_turn_level_aware(dialogue, utterance, history, profile, config, rng),
            UserDecoder::Sampling(models, cfg) => {
                decode_turn_sampling_baseline(models, history, profile, cfg, rng)
            }
        }
    }
}

fn active_labels(profile: &UserProfile, level: Option<TraitLevel>) -> Vec<ModelLabel> {
    profile
        .active()
        .filter(|(t, _)| level.is_none_or(|l| t.level() == l))
        .map(|(t, i)| ModelLabel::Specialized(t, i))
        .collect()
}

fn uniform(models: &ModelSet, labels: &[ModelLabel]) -> Result<ProfileWeights, SimError> {
    let list = labels
        .iter()
        .map(|l| models.get(*l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ProfileWeights::uniform(list)?)
}

/// Chooses the models and weights `method` uses for `profile`. `weights`
/// overrides the uniform mixture of [`Method::Mtad`].
pub fn decoder_for(
    method: Method,
    profile: &UserProfile,
    models: &ModelSet,
    weights: Option<&[(ModelLabel, f64)]>,
    config: &DecoderConfig,
) -> Result<UserDecoder, SimError> {
    let mut all = active_labels(profile, None);
    if all.is_empty() {
        all.push(ModelLabel::Regular);
    }
    let cfg = config.clone();
    Ok(match method {
        Method::Sts => {
            let label = ModelLabel::for_profile(profile).ok_or_else(|| SimError::Unsupported {
                method,
                profile: profile.label(),
                reason: "a specialized simulator covers one trait only".into(),
            })?;
            UserDecoder::Mixture(ProfileWeights::single(models.get(label)?), cfg)
        }
        Method::Jts => UserDecoder::Mixture(ProfileWeights::single(models.get(ModelLabel::Joint)?), cfg),
        Method::Mtad => match weights {
            Some(pairs) => {
                let entries = pairs
                    .iter()
                    .map(|(l, w)| Ok((models.get(*l)?, *w)))
                    .collect::<Result<Vec<_>, SimError>>()?;
                UserDecoder::Mixture(ProfileWeights::new(entries)?, cfg)
            }
            None => UserDecoder::Mixture(uniform(models, &all)?, cfg),
        },
        Method::Sampling => {
            let list = all.iter().map(|l| models.get(*l)).collect::<Result<Vec<_>, _>>()?;
            UserDecoder::Sampling(list, cfg)
        }
        Method::MtadLa => {
            let level = |l: TraitLevel| {
                let mut labels = active_labels(profile, Some(l));
                if labels.is_empty() {
                    log::info!(
                        "profile {} has no {l:?}-level trait; using the regular model there",
                        profile.label()
                    );
                    labels.push(ModelLabel::Regular);
                }
                uniform(models, &labels)
            };
            UserDecoder::LevelAware {
                dialogue: level(TraitLevel::Dialogue)?,
                utterance: level(TraitLevel::Utterance)?,
                config: cfg,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub max_turns: usize,
    pub system_error_rate: f64,
    pub decoder: DecoderConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_turns: 20,
            system_error_rate: 0.15,
            decoder: DecoderConfig::default(),
        }
    }
}

/// Runs one conversation. Turn `k` draws user tokens from stream `2k` and
/// the system's error and template choices from stream `2k + 1` of `seed`,
/// so methods compared on the same seed face the same system behaviour.
/// Degenerate turns are recorded as `Fallback` with their flag set and the
/// dialogue continues.
pub fn run_simulation<D: TurnDecoder + ?Sized>(
    decoder: &D,
    task: &Task,
    profile: &UserProfile,
    config: &SimConfig,
    seed: u64,
) -> Result<Dialogue, DecodeError> {
    let mut turns: Vec<Turn> = Vec::new();
    let mut cursor = 0usize;
    for k in 0..config.max_turns as u64 {
        let mut user_rng = seed::rng(seed::derive(seed, 2 * k));
        let mut system_rng = seed::rng(seed::derive(seed, 2 * k + 1));
        let out = decoder.decode(&turns, profile, &mut user_rng)?;
        let intent = if out.degenerate { Intent::Fallback } else { out.intent };
        let reply = system_respond(
            intent,
            &out.utterance,
            task,
            cursor,
            config.system_error_rate,
            &mut system_rng,
        );
        cursor = reply.cursor;
        turns.push(Turn {
            intent,
            user_utterance: out.utterance,
            system_response: reply.text,
            system_error: reply.error,
            degenerate: out.degenerate,
        });
        if intent == Intent::Stop {
            break;
        }
    }
    Ok(Dialogue {
        task_id: task.task_id.clone(),
        task_title: task.title.clone(),
        profile: *profile,
        seed,
        turns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

/// Dialogues simulated for one profile with one method.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub profile: UserProfile,
    pub method: Method,
    pub seed: u64,
    pub config: SimConfig,
    pub models: Vec<ModelLabel>,
    /// Free-form description of where the tasks came from.
    pub task_source: String,
    pub dialogues: Vec<Dialogue>,
    pub failures: Vec<DialogueFailure>,
}

/// Seed of the run for `profile`; every profile gets its own stream.
pub fn run_seed(base: u64, profile: &UserProfile) -> u64 {
    seed::derive(base, seed::label_hash(&profile.label()))
}

/// Simulates `n` dialogues for one profile. Tasks are dealt round-robin
/// from a per-run shuffle. Dialogues run in parallel and are returned in
/// index order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_profile<D: TurnDecoder + ?Sized>(
    decoder: &D,
    method: Method,
    models: Vec<ModelLabel>,
    profile: &UserProfile,
    n: usize,
    tasks: &[Task],
    config: &SimConfig,
    seed_base: u64,
) -> Result<SimulationRun, SimError> {
    if tasks.is_empty() {
        return Err(SimError::NoTasks);
    }
    let seed = run_seed(seed_base, profile);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, u64::MAX)));
    let results: Vec<(usize, u64, Result<Dialogue, DecodeError>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(seed, i as u64);
            let task = &tasks[order[i % order.len()]];
            (i, s, run_simulation(decoder, task, profile, config, s))
        })
        .collect();
    let mut dialogues = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (index, seed, r) in results {
        match r {
            Ok(d) => dialogues.push(d),
            Err(e) => {
                log::error!("dialogue {index} of {} failed: {e}", profile.label());
                failures.push(DialogueFailure {
                    index,
                    seed,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(SimulationRun {
        profile: *profile,
        method,
        seed,
        config: config.clone(),
        models,
        task_source: String::new(),
        dialogues,
        failures,
    })
}

/// Everything [`run_batch`] needs besides the profiles.
#[derive(Debug, Clone, Copy)]
pub struct BatchRequest<'a> {
    pub method: Method,
    pub models: &'a ModelSet,
    pub weights: Option<&'a [(ModelLabel, f64)]>,
    pub n_per_profile: usize,
    pub tasks: &'a [Task],
    pub config: &'a SimConfig,
    pub seed: u64,
}

/// One run per profile.
pub fn run_batch(req: &BatchRequest, profiles: &[UserProfile]) -> Result<Vec<SimulationRun>, SimError> {
    profiles
        .iter()
        .map(|p| {
            let decoder = decoder_for(req.method, p, req.models, req.weights, &req.config.decoder)?;
            simulate_profile(
                &decoder,
                req.method,
                decoder.labels(),
                p,
                req.n_per_profile,
                req.tasks,
                req.config,
                req.seed,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub profile: String,
    pub method: Method,
    pub seed: u64,
    pub dialogues: usize,
    pub models: Vec<ModelLabel>,
    #[serde(default)]
    pub task_source: String,
    pub config: SimConfig,
    pub failures: Vec<DialogueFailure>,
}

pub const RUN_META_FILE: &str = "run.meta";
pub const DIALOGUES_FILE: &str = "dialogues.jsonl";

/// Writes `run.meta` and `dialogues.jsonl` into `dir`.
pub fn write_run(run: &SimulationRun, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let meta = RunMeta {
        profile: run.profile.label(),
        method: run.method,
        seed: run.seed,
        dialogues: run.dialogues.len(),
        models: run.models.clone(),
        task_source: run.task_source.clone(),
        config: run.config.clone(),
        failures: run.failures.clone(),
    };
    std::fs::write(dir.join(RUN_META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    let f = std::io::BufWriter::new(std::fs::File::create(dir.join(DIALOGUES_FILE))?);
    write_jsonl(f, &run.dialogues)?;
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<SimulationRun, SimError> {
    let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(RUN_META_FILE))?)?;
    let f = std::io::BufReader::new(std::fs::File::open(dir.join(DIALOGUES_FILE))?);
    let dialogues = read_jsonl(f)?;
    let profile = UserProfile::from_label(&meta.profile).map_err(|e| SimError::Unsupported {
        method: meta.method,
        profile: meta.profile.clone(),
        reason: e.to_string(),
    })?;
    Ok(SimulationRun {
        profile,
        method: meta.method,
        seed: meta.seed,
        config: meta.config,
        models: meta.models,
        task_source: meta.task_source,
        dialogues,
        failures: meta.failures,
    })
}
