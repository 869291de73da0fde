//! Count-based n-gram trait simulators.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::vocab::{build_input, target_tokens, InputFormat, TokenId, Vocabulary};
use super::LmError;
use crate::corpus::BalancedSet;
use crate::types::{Intensity, Trait, Turn, UserProfile, TokenDistribution};

/// Which training data a model was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelLabel {
    /// Regular-profile dialogues only.
    Regular,
    /// Dialogues of one trait at one non-neutral intensity.
    Specialized(Trait, Intensity),
    /// Dialogues of every profile, conditioned through the profile tokens.
    Joint,
}

impl ModelLabel {
    /// The Regular label, and one specialized label per trait and
    /// non-neutral intensity.
    pub fn single_trait_labels() -> Vec<ModelLabel> {
        let mut out = vec![ModelLabel::Regular];
        for t in Trait::ALL {
            out.push(ModelLabel::Specialized(t, Intensity::Low));
            out.push(ModelLabel::Specialized(t, Intensity::High));
        }
        out
    }

    /// Profile of the training dialogues; `None` for the joint model.
    pub fn profile(self) -> Option<UserProfile> {
        match self {
            ModelLabel::Regular => Some(UserProfile::regular()),
            ModelLabel::Specialized(t, i) => Some(UserProfile::single(t, i)),
            ModelLabel::Joint => None,
        }
    }

    pub fn for_profile(profile: &UserProfile) -> Option<ModelLabel> {
        let active: Vec<_> = profile.active().collect();
        match active.as_slice() {
            [] => Some(ModelLabel::Regular),
            [(t, i)] => Some(ModelLabel::Specialized(*t, *i)),
            _ => None,
        }
    }

    pub fn trait_(self) -> Option<Trait> {
        match self {
            ModelLabel::Specialized(t, _) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for ModelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelLabel::Regular => f.write_str("regular"),
            ModelLabel::Joint => f.write_str("joint"),
            ModelLabel::Specialized(t, i) => write!(f, "{}-{}", t.name(), i.name()),
        }
    }
}

impl FromStr for ModelLabel {
    type Err = LmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        match s.as_str() {
            "regular" => return Ok(ModelLabel::Regular),
            "joint" | "jts" => return Ok(ModelLabel::Joint),
            _ => {}
        }
        let bad = || LmError::UnknownLabel(s.clone());
        let (t, i) = s.split_once(['-', '=']).ok_or_else(bad)?;
        let t: Trait = t.parse().map_err(|_| bad())?;
        let i: Intensity = i.parse().map_err(|_| bad())?;
        if i == Intensity::Neutral {
            return Err(bad());
        }
        Ok(ModelLabel::Specialized(t, i))
    }
}

impl Serialize for ModelLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramConfig {
    pub order: usize,
    pub delta: f64,
    pub format: InputFormat,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 4,
            delta: 0.01,
            format: InputFormat::default(),
        }
    }
}

/// One user turn as a (context, target) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub context: Vec<String>,
    pub target: Vec<String>,
}

/// Turns every kept user turn of the set into a training example. The
/// context uses the dialogue's own profile.
pub fn training_examples(set: &BalancedSet, format: &InputFormat) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for d in &set.dialogues {
        for k in 0..d.turns.len() {
            if set.keeps_turn(d, k) {
                out.push(example_for(&d.turns[..k], &d.turns[k], &d.profile, format));
            }
        }
    }
    out
}

pub fn example_for(
    history: &[Turn],
    turn: &Turn,
    profile: &UserProfile,
    format: &InputFormat,
) -> TrainingExample {
    TrainingExample {
        context: build_input(history, profile, format),
        target: target_tokens(turn),
    }
}

/// Continuation counts of one context, sorted by token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Counts {
    pub(crate) total: u64,
    pub(crate) next: Vec<(TokenId, u64)>,
}

/// Word-level n-gram model. Tables are keyed by context length, from the
/// empty context up to `order - 1` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    pub(crate) label: ModelLabel,
    pub(crate) order: usize,
    pub(crate) delta: f64,
    pub(crate) format: InputFormat,
    pub(crate) vocab: Arc<Vocabulary>,
    pub(crate) tables: Vec<HashMap<Vec<TokenId>, Counts>>,
}

impl NGramModel {
    pub fn label(&self) -> ModelLabel {
        self.label
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn format(&self) -> &InputFormat {
        &self.format
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Number of distinct contexts stored for each context length.
    pub fn table_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(HashMap::len).collect()
    }

    /// Encoded model input for the next user turn.
    pub fn context_for(&self, history: &[Turn], profile: &UserProfile) -> Vec<TokenId> {
        self.vocab.encode(&build_input(history, profile, &self.format))
    }

    /// Next-token distribution after `context`.
    ///
    /// Starts from the additively smoothed unigram distribution and, for
    /// each longer suffix of the context that occurred in training,
    /// interpolates `P(w | h) = (c(h, w) + δ|V| P'(w)) / (c(h) + δ|V|)` where
    /// `P'` is the estimate for the next shorter suffix. With `δ = 0` this is
    /// the maximum-likelihood estimate of the longest known suffix.
    pub fn next_token_distribution(&self, context: &[TokenId]) -> TokenDistribution {
        let v = self.vocab.len();
        let dv = self.delta * v as f64;
        let unigram = &self.tables[0][&Vec::new()];
        let denom = unigram.total as f64 + dv;
        let mut p = vec![self.delta / denom; v];
        for &(w, c) in &unigram.next {
            p[w as usize] = (c as f64 + self.delta) / denom;
        }
        let mut key = Vec::with_capacity(self.order);
        for len in 1..self.order.min(context.len() + 1) {
            key.clear();
            key.extend_from_slice(&context[context.len() - len..]);
            let Some(counts) = self.tables[len].get(&key) else {
                break;
            };
            let denom = counts.total as f64 + dv;
            let keep = dv / denom;
            for x in p.iter_mut() {
                *x *= keep;
            }
            for &(w, c) in &counts.next {
                p[w as usize] += c as f64 / denom;
            }
        }
        TokenDistribution::from_vec_unchecked(p)
    }

    /// Natural-log probability of `target` after `context`.
    pub fn log_prob(&self, context: &[TokenId], target: &[TokenId]) -> f64 {
        let mut full = context.to_vec();
        let mut total = 0.0;
        for &t in target {
            total += self.next_token_distribution(&full).get(t as usize).ln();
            full.push(t);
        }
        total
    }

    /// Per-token perplexity over a set of examples.
    pub fn perplexity(&self, examples: &[TrainingExample]) -> f64 {
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for e in examples {
            let target = self.vocab.encode(&e.target);
            log_sum += self.log_prob(&self.vocab.encode(&e.context), &target);
            n += target.len();
        }
        if n == 0 {
            return 1.0;
        }
        (-log_sum / n as f64).exp()
    }
}

fn check_config(config: &NGramConfig) -> Result<(), LmError> {
    if config.order == 0 {
        return Err(LmError::InvalidConfig("order must be at least 1".into()));
    }
    if !(config.delta.is_finite() && config.delta >= 0.0) {
        return Err(LmError::InvalidConfig("delta must be non-negative".into()));
    }
    Ok(())
}

/// Fits a model on the examples of `set`. Specialized and Regular labels
/// require every dialogue to carry the matching profile.
pub fn train(
    label: ModelLabel,
    set: &BalancedSet,
    vocab: Arc<Vocabulary>,
    config: &NGramConfig,
) -> Result<NGramModel, LmError> {
    check_config(config)?;
    if let Some(expected) = label.profile() {
        if let Some(d) = set.dialogues.iter().find(|d| d.profile != expected) {
            return Err(LmError::ProfileMismatch {
                label: label.to_string(),
                found: d.profile.label(),
            });
        }
    }
    let examples = training_examples(set, &config.format);
    if examples.is_empty() {
        return Err(LmError::EmptyCorpus(label.to_string()));
    }

    let n = config.order;
    let mut raw: Vec<HashMap<Vec<TokenId>, HashMap<TokenId, u64>>> = vec![HashMap::new(); n];
    for e in &examples {
        let mut full = vocab.encode(&e.context);
        let start = full.len();
        full.extend(vocab.encode(&e.target));
        for pos in start..full.len() {
            let w = full[pos];
            for len in 0..n.min(pos + 1) {
                let key = full[pos - len..pos].to_vec();
                *raw[len].entry(key).or_default().entry(w).or_default() += 1;
            }
        }
    }
    let tables = raw
        .into_iter()
        .map(|table| {
            table
                .into_iter()
                .map(|(key, next)| {
                    let mut next: Vec<(TokenId, u64)> = next.into_iter().collect();
                    next.sort_unstable();
                    let total = next.iter().map(|(_, c)| c).sum();
                    (key, Counts { total, next })
                })
                .collect()
        })
        .collect();
    Ok(NGramModel {
        label,
        order: n,
        delta: config.delta,
        format: config.format.clone(),
        vocab,
        tables,
    })
}

/// Specialized simulator for one trait at one intensity.
pub fn train_sts(
    set: &BalancedSet,
    t: Trait,
    intensity: Intensity,
    vocab: Arc<Vocabulary>,
    config: &NGramConfig,
) -> Result<NGramModel, LmError> {
    if intensity == Intensity::Neutral {
        return train(ModelLabel::Regular, set, vocab, config);
    }
    train(ModelLabel::Specialized(t, intensity), set, vocab, config)
}

/// Joint simulator over dialogues of any profile.
pub fn train_jts(
    set: &BalancedSet,
    vocab: Arc<Vocabulary>,
    config: &NGramConfig,
) -> Result<NGramModel, LmError> {
    train(ModelLabel::Joint, set, vocab, config)
}
