//! Deterministic utterance scorers.
//!
//! Emotion and fluency use small bundled lexicons instead of learned
//! classifiers; both map into `[0, 1]`. The same functions back corpus
//! generation (utterance selection thresholds) and evaluation.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// Gain applied to the normalized lexicon balance before squashing.
pub const EMOTION_GAIN: f64 = 3.0;
pub const DISFLUENCY_PENALTY: f64 = 0.25;
pub const DUPLICATE_PENALTY: f64 = 0.2;
pub const UNKNOWN_WORD_PENALTY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScores {
    pub word_count: usize,
    pub emotion: f64,
    pub fluency: f64,
}

/// A set of lowercase tokens loaded from a one-token-per-line file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon(HashSet<String>);

impl Lexicon {
    /// Parses lexicon text. Blank lines and lines starting with `#` are
    /// skipped; everything else is trimmed and lowercased.
    pub fn parse(text: &str) -> Self {
        Lexicon(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct Scorers {
    pub positive: Lexicon,
    pub negative: Lexicon,
    pub disfluency: Lexicon,
    /// Words considered well-formed; anything else is treated as noise.
    pub vocabulary: Lexicon,
}

const POSITIVE: &str = include_str!("../assets/lexicon/positive.txt");
const NEGATIVE: &str = include_str!("../assets/lexicon/negative.txt");
const DISFLUENCY: &str = include_str!("../assets/lexicon/disfluency.txt");
const VOCABULARY: &str = include_str!("../assets/lexicon/vocabulary.txt");

impl Scorers {
    /// Scorers backed by the lexicons shipped with the crate.
    pub fn bundled() -> &'static Scorers {
        static BUNDLED: OnceLock<Scorers> = OnceLock::new();
        BUNDLED.get_or_init(|| Scorers {
            positive: Lexicon::parse(POSITIVE),
            negative: Lexicon::parse(NEGATIVE),
            disfluency: Lexicon::parse(DISFLUENCY),
            vocabulary: Lexicon::parse(VOCABULARY),
        })
    }

    /// Loads `positive.txt`, `negative.txt`, `disfluency.txt` and
    /// `vocabulary.txt` from a directory.
    pub fn load_dir(dir: &Path) -> std::io::Result<Scorers> {
        Ok(Scorers {
            positive: Lexicon::load(&dir.join("positive.txt"))?,
            negative: Lexicon::load(&dir.join("negative.txt"))?,
            disfluency: Lexicon::load(&dir.join("disfluency.txt"))?,
            vocabulary: Lexicon::load(&dir.join("vocabulary.txt"))?,
        })
    }

    pub fn score(&self, utterance: &str) -> UtteranceScores {
        UtteranceScores {
            word_count: word_count(utterance),
            emotion: self.emotion(utterance),
            fluency: self.fluency(utterance),
        }
    }

    pub fn emotion(&self, utterance: &str) -> f64 {
        let words = normalized_words(utterance);
        let pos = words.iter().filter(|w| self.positive.contains(w)).count() as f64;
        let neg = words.iter().filter(|w| self.negative.contains(w)).count() as f64;
        let n = word_count(utterance).max(1) as f64;
        0.5 + 0.5 * (EMOTION_GAIN * (pos - neg) / n).tanh()
    }

    pub fn fluency(&self, utterance: &str) -> f64 {
        let words = normalized_words(utterance);
        let mut penalty = 0.0;
        for (i, w) in words.iter().enumerate() {
            if self.disfluency.contains(w) {
                penalty += DISFLUENCY_PENALTY;
            } else if !self.vocabulary.contains(w) {
                penalty += UNKNOWN_WORD_PENALTY;
            }
            if i > 0 && words[i - 1] == *w {
                penalty += DUPLICATE_PENALTY;
            }
        }
        (1.0 - penalty).clamp(0.0, 1.0)
    }
}

/// Number of whitespace-separated tokens.
pub fn word_count(utterance: &str) -> usize {
    utterance.split_whitespace().count()
}

/// Jaccard similarity of the lowercase word sets; 0 when both are empty.
pub fn overlap_score(current: &str, previous: &str) -> f64 {
    let a: HashSet<String> = normalized_words(current).into_iter().collect();
    let b: HashSet<String> = normalized_words(previous).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Lowercases and strips leading/trailing punctuation from each token.
/// Tokens that are pure punctuation are dropped.
pub fn normalized_words(utterance: &str) -> Vec<String> {
    utterance
        .split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn emotion_score(utterance: &str) -> f64 {
    Scorers::bundled().emotion(utterance)
}

pub fn fluency_score(utterance: &str) -> f64 {
    Scorers::bundled().fluency(utterance)
}
