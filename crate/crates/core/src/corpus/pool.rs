//! Per-intent utterance pools and utterance-level trait selection.

use std::collections::BTreeMap;

use rand::Rng;

use super::config::GenerationConfig;
use super::CorpusError;
use crate::scorers::{overlap_score, Scorers, UtteranceScores};
use crate::types::{Intensity, Intent, Trait, Turn, UserProfile};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolUtterance {
    pub text: String,
    pub scores: UtteranceScores,
}

/// Utterances available for each intent, scored once at load time.
#[derive(Debug, Clone)]
pub struct UtterancePool {
    entries: Vec<Vec<PoolUtterance>>,
    word_ranges: Vec<(usize, usize)>,
}

impl UtterancePool {
    /// Builds a pool, scoring every utterance. Every intent must have at
    /// least one utterance.
    pub fn new(
        utterances: BTreeMap<Intent, Vec<String>>,
        scorers: &Scorers,
    ) -> Result<Self, CorpusError> {
        let mut entries = vec![Vec::new(); Intent::COUNT];
        for (intent, texts) in utterances {
            entries[intent.index()] = texts
                .into_iter()
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .map(|text| PoolUtterance {
                    scores: scorers.score(&text),
                    text,
                })
                .collect();
        }
        for intent in Intent::ALL {
            if entries[intent.index()].is_empty() {
                return Err(CorpusError::EmptyPool(intent));
            }
        }
        let word_ranges = entries
            .iter()
            .map(|list: &Vec<PoolUtterance>| {
                let counts = list.iter().map(|u| u.scores.word_count);
                (counts.clone().min().unwrap_or(0), counts.max().unwrap_or(0))
            })
            .collect();
        Ok(Self {
            entries,
            word_ranges,
        })
    }

    /// Parses the JSON pool asset: `{intent: [utterance, ...]}`.
    pub fn from_json_str(text: &str, scorers: &Scorers) -> Result<Self, CorpusError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut by_intent = BTreeMap::new();
        for (name, list) in raw {
            let intent =
                Intent::from_name(&name).ok_or_else(|| CorpusError::UnknownName(name.clone()))?;
            by_intent.insert(intent, list);
        }
        Self::new(by_intent, scorers)
    }

    pub fn utterances(&self, intent: Intent) -> &[PoolUtterance] {
        &self.entries[intent.index()]
    }

    /// Word count scaled to [0, 1] by the min and max within the intent's pool.
    pub fn normalized_word_count(&self, intent: Intent, word_count: usize) -> f64 {
        let (lo, hi) = self.word_ranges[intent.index()];
        if hi == lo {
            return 0.0;
        }
        (word_count.saturating_sub(lo)) as f64 / (hi - lo) as f64
    }

    fn trait_value(&self, intent: Intent, u: &PoolUtterance, t: Trait) -> f64 {
        match t {
            Trait::Verbosity => self.normalized_word_count(intent, u.scores.word_count),
            Trait::Emotion => u.scores.emotion,
            Trait::Fluency => u.scores.fluency,
            _ => unreachable!("only score-based traits are thresholded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedUtterance<'a> {
    pub text: &'a str,
    pub weight: f64,
}

/// Candidate utterances for `intent` after applying the profile's
/// utterance-level traits.
///
/// Verbosity, emotion and fluency keep only utterances whose score falls
/// inside the configured thresholds. Repetition then either reuses the most
/// recent prior utterance of the same intent (probability `exact`), or keeps
/// only candidates sharing a word with the previous user utterance
/// (probability `overlap`). Filters that would leave nothing fall back to the
/// previous candidate set.
pub fn apply_utterance_level_traits<'a, R: Rng + ?Sized>(
    profile: &UserProfile,
    pool: &'a UtterancePool,
    intent: Intent,
    history: &'a [Turn],
    config: &GenerationConfig,
    rng: &mut R,
) -> Result<Vec<WeightedUtterance<'a>>, CorpusError> {
    let all = pool.utterances(intent);
    if all.is_empty() {
        return Err(CorpusError::EmptyPool(intent));
    }

    let mut candidates: Vec<&PoolUtterance> = all.iter().collect();
    let score_traits = [Trait::Verbosity, Trait::Emotion, Trait::Fluency];
    if score_traits
        .iter()
        .any(|t| profile.get(*t) != Intensity::Neutral)
    {
        let filtered: Vec<&PoolUtterance> = all
            .iter()
            .filter(|u| {
                score_traits.iter().all(|t| {
                    let i = profile.get(*t);
                    i == Intensity::Neutral
                        || config.thresholds(*t, i).contains(pool.trait_value(intent, u, *t))
                })
            })
            .collect();
        if filtered.is_empty() {
            log::debug!("utterance thresholds emptied the {intent} pool; using the full pool");
        } else {
            candidates = filtered;
        }
    }

    let probs = config.repetition.get(profile.get(Trait::Repetition));
    let exact_draw: f64 = rng.gen();
    let overlap_draw: f64 = rng.gen();

    if exact_draw < probs.exact {
        if let Some(prior) = history.iter().rev().find(|t| t.intent == intent) {
            return Ok(vec![WeightedUtterance {
                text: prior.user_utterance.as_str(),
                weight: 1.0,
            }]);
        }
    }
    if overlap_draw < probs.overlap {
        if let Some(previous) = history.last() {
            let overlapping: Vec<&PoolUtterance> = candidates
                .iter()
                .copied()
                .filter(|u| overlap_score(&u.text, &previous.user_utterance) > 0.0)
                .collect();
            if overlapping.is_empty() {
                log::debug!("no {intent} utterance overlaps the previous one; overlap filter skipped");
            } else {
                candidates = overlapping;
            }
        }
    }

    let weight = 1.0 / candidates.len() as f64;
    Ok(candidates
        .into_iter()
        .map(|u| WeightedUtterance {
            text: u.text.as_str(),
            weight,
        })
        .collect())
}
