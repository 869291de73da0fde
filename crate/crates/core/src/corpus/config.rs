use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::types::{Intensity, Trait};

/// Values keyed by a (trait, intensity) pair. Serialized as a map with
/// `trait=intensity` string keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraitIntensityMap<V> {
    entries: BTreeMap<(Trait, Intensity), V>,
}

impl<V> TraitIntensityMap<V> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, t: Trait, i: Intensity, value: V) {
        self.entries.insert((t, i), value);
    }

    pub fn get(&self, t: Trait, i: Intensity) -> Option<&V> {
        self.entries.get(&(t, i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Trait, Intensity, &V)> {
        self.entries.iter().map(|((t, i), v)| (*t, *i, v))
    }
}

impl<V: Serialize> Serialize for TraitIntensityMap<V> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, &V> = self
            .entries
            .iter()
            .map(|((t, i), v)| (format!("{t}={i}"), v))
            .collect();
        keyed.serialize(serializer)
    }
}

impl<'de, V: Deserialize<'de>> Deserialize<'de> for TraitIntensityMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let keyed = BTreeMap::<String, V>::deserialize(deserializer)?;
        let mut out = TraitIntensityMap::new();
        for (key, value) in keyed {
            let (t, i) = key
                .split_once('=')
                .ok_or_else(|| de::Error::custom(format!("expected trait=intensity, got `{key}`")))?;
            let t: Trait = t.parse().map_err(de::Error::custom)?;
            let i: Intensity = i.parse().map_err(de::Error::custom)?;
            out.insert(t, i, value);
        }
        Ok(out)
    }
}

/// Bottom/top selection thresholds on a 0-1 utterance score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub bottom: f64,
    pub top: f64,
}

impl Thresholds {
    pub const FULL: Thresholds = Thresholds {
        bottom: 0.0,
        top: 1.0,
    };

    pub fn contains(&self, value: f64) -> bool {
        value >= self.bottom && value <= self.top
    }
}

/// Probabilities of reusing an exact prior utterance and of restricting the
/// choice to utterances overlapping the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionProbs {
    pub exact: f64,
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionTable {
    pub low: RepetitionProbs,
    pub neutral: RepetitionProbs,
    pub high: RepetitionProbs,
}

impl RepetitionTable {
    pub fn get(&self, intensity: Intensity) -> RepetitionProbs {
        match intensity {
            Intensity::Low => self.low,
            Intensity::Neutral => self.neutral,
            Intensity::High => self.high,
        }
    }
}

impl Default for RepetitionTable {
    fn default() -> Self {
        Self {
            low: RepetitionProbs {
                exact: 0.0,
                overlap: 0.0,
            },
            neutral: RepetitionProbs {
                exact: 0.15,
                overlap: 0.15,
            },
            high: RepetitionProbs {
                exact: 1.0,
                overlap: 1.0,
            },
        }
    }
}

/// Knobs of profile-aware dialogue generation. Defaults follow the
/// reference corpus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub max_turns: usize,
    pub system_error_rate: f64,
    pub dialogue_level_factors: TraitIntensityMap<f64>,
    pub utterance_thresholds: TraitIntensityMap<Thresholds>,
    pub repetition: RepetitionTable,
    pub exploration_top_k: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        use Intensity::*;
        use Trait::*;

        let mut factors = TraitIntensityMap::new();
        factors.insert(Engagement, Low, 2.0);
        factors.insert(Engagement, High, 0.5);
        factors.insert(Cooperativeness, Low, 2.0);
        factors.insert(Cooperativeness, High, 0.5);
        factors.insert(Exploration, Low, 0.2);
        factors.insert(Exploration, High, 0.2);
        factors.insert(Tolerance, Low, 10.0);
        factors.insert(Tolerance, High, 1.0);

        let mut thresholds = TraitIntensityMap::new();
        for t in [Verbosity, Emotion, Fluency] {
            thresholds.insert(t, Low, Thresholds { bottom: 0.0, top: 0.5 });
            thresholds.insert(t, High, Thresholds { bottom: 0.5, top: 1.0 });
        }

        Self {
            max_turns: 20,
            system_error_rate: 0.15,
            dialogue_level_factors: factors,
            utterance_thresholds: thresholds,
            repetition: RepetitionTable::default(),
            exploration_top_k: 1,
        }
    }
}

impl GenerationConfig {
    /// Factor for a dialogue-level trait; `None` for neutral intensities and
    /// unconfigured pairs.
    pub fn dialogue_factor(&self, t: Trait, i: Intensity) -> Option<f64> {
        if i == Intensity::Neutral {
            return None;
        }
        self.dialogue_level_factors.get(t, i).copied()
    }

    pub fn thresholds(&self, t: Trait, i: Intensity) -> Thresholds {
        if i == Intensity::Neutral {
            return Thresholds::FULL;
        }
        self.utterance_thresholds
            .get(t, i)
            .copied()
            .unwrap_or(Thresholds::FULL)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns == 0 {
            return Err("max_turns must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.system_error_rate) {
            return Err(format!("system_error_rate {} outside [0, 1]", self.system_error_rate));
        }
        if self.exploration_top_k == 0 || self.exploration_top_k >= crate::types::Intent::COUNT {
            return Err(format!("exploration_top_k {} out of range", self.exploration_top_k));
        }
        for (t, i, f) in self.dialogue_level_factors.iter() {
            if !(f.is_finite() && *f >= 0.0) {
                return Err(format!("factor for {t}={i} must be non-negative"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.bottom, self.top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_tables() {
        use Intensity::*;
        use Trait::*;
        let c = GenerationConfig::default();
        assert_eq!(c.max_turns, 20);
        assert_eq!(c.system_error_rate, 0.15);
        assert_eq!(c.exploration_top_k, 1);
        assert_eq!(c.dialogue_factor(Engagement, Low), Some(2.0));
        assert_eq!(c.dialogue_factor(Engagement, High), Some(0.5));
        assert_eq!(c.dialogue_factor(Cooperativeness, Low), Some(2.0));
        assert_eq!(c.dialogue_factor(Cooperativeness, High), Some(0.5));
        assert_eq!(c.dialogue_factor(Exploration, Low), Some(0.2));
        assert_eq!(c.dialogue_factor(Exploration, High), Some(0.2));
        assert_eq!(c.dialogue_factor(Tolerance, Low), Some(10.0));
        assert_eq!(c.dialogue_factor(Tolerance, High), Some(1.0));
        assert_eq!(c.dialogue_factor(Engagement, Neutral), None);
        for t in [Verbosity, Emotion, Fluency] {
            assert_eq!(c.thresholds(t, Low), Thresholds { bottom: 0.0, top: 0.5 });
            assert_eq!(c.thresholds(t, High), Thresholds { bottom: 0.5, top: 1.0 });
            assert_eq!(c.thresholds(t, Neutral), Thresholds::FULL);
        }
        assert_eq!(c.repetition.get(High), RepetitionProbs { exact: 1.0, overlap: 1.0 });
        assert_eq!(c.repetition.get(Low), RepetitionProbs { exact: 0.0, overlap: 0.0 });
        assert_eq!(c.repetition.get(Neutral), RepetitionProbs { exact: 0.15, overlap: 0.15 });
    }

    #[test]
    fn config_serde_round_trip() {
        let c = GenerationConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"engagement=low\":2.0"));
        let back: GenerationConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = GenerationConfig::default();
        assert!(c.validate().is_ok());
        c.system_error_rate = 1.5;
        assert!(c.validate().is_err());
    }
}
