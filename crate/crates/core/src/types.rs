//! Shared domain vocabulary: intents, traits, intensities, profiles,
//! dialogues, tasks and token distributions.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Dialogue acts a simulated user can perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    Start,
    NextStep,
    PreviousStep,
    Resume,
    Repeat,
    Stop,
    Question,
    Definition,
    Replacement,
    GetFunFact,
    NewTask,
    ChitChat,
    Sensitive,
    Fallback,
}

/// Group membership of an intent, used both when editing transition
/// probabilities and when measuring dialogue-level traits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntentFlags {
    pub is_stop: bool,
    pub is_explorative: bool,
    pub is_cooperative: bool,
}

impl Intent {
    pub const COUNT: usize = 14;

    pub const ALL: [Intent; Intent::COUNT] = [
        Intent::Start,
        Intent::NextStep,
        Intent::PreviousStep,
        Intent::Resume,
        Intent::Repeat,
        Intent::Stop,
        Intent::Question,
        Intent::Definition,
        Intent::Replacement,
        Intent::GetFunFact,
        Intent::NewTask,
        Intent::ChitChat,
        Intent::Sensitive,
        Intent::Fallback,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Intent> {
        Intent::ALL.get(index).copied()
    }

    pub fn flags(self) -> IntentFlags {
        intent_flags(self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Intent::Start => "Start",
            Intent::NextStep => "NextStep",
            Intent::PreviousStep => "PreviousStep",
            Intent::Resume => "Resume",
            Intent::Repeat => "Repeat",
            Intent::Stop => "Stop",
            Intent::Question => "Question",
            Intent::Definition => "Definition",
            Intent::Replacement => "Replacement",
            Intent::GetFunFact => "GetFunFact",
            Intent::NewTask => "NewTask",
            Intent::ChitChat => "ChitChat",
            Intent::Sensitive => "Sensitive",
            Intent::Fallback => "Fallback",
        }
    }

    /// Reserved vocabulary token that stands for this intent in model input
    /// and output.
    pub fn token(self) -> &'static str {
        match self {
            Intent::Start => "<start>",
            Intent::NextStep => "<next>",
            Intent::PreviousStep => "<previous>",
            Intent::Resume => "<resume>",
            Intent::Repeat => "<repeat>",
            Intent::Stop => "<stop>",
            Intent::Question => "<question>",
            Intent::Definition => "<definition>",
            Intent::Replacement => "<replacement>",
            Intent::GetFunFact => "<fun_fact>",
            Intent::NewTask => "<new_task>",
            Intent::ChitChat => "<chitchat>",
            Intent::Sensitive => "<sensitive>",
            Intent::Fallback => "<fallback>",
        }
    }

    pub fn from_token(token: &str) -> Option<Intent> {
        Intent::ALL.iter().copied().find(|i| i.token() == token)
    }

    pub fn from_name(name: &str) -> Option<Intent> {
        Intent::ALL
            .iter()
            .copied()
            .find(|i| i.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Static group flags of an intent.
pub fn intent_flags(intent: Intent) -> IntentFlags {
    use Intent::*;
    let is_stop = intent == Stop;
    let is_explorative = matches!(
        intent,
        NextStep | Question | Definition | Replacement | GetFunFact
    );
    let is_cooperative = matches!(
        intent,
        NextStep | PreviousStep | Resume | Repeat | Stop | Question | Definition | Replacement
            | GetFunFact
    );
    IntentFlags {
        is_stop,
        is_explorative,
        is_cooperative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraitLevel {
    Dialogue,
    Utterance,
}

/// A measurable conversational characteristic of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trait {
    Engagement,
    Cooperativeness,
    Exploration,
    Tolerance,
    Verbosity,
    Emotion,
    Fluency,
    Repetition,
}

impl Trait {
    pub const COUNT: usize = 8;

    /// Canonical order, also used for profile token encoding.
    pub const ALL: [Trait; Trait::COUNT] = [
        Trait::Engagement,
        Trait::Cooperativeness,
        Trait::Exploration,
        Trait::Tolerance,
        Trait::Verbosity,
        Trait::Emotion,
        Trait::Fluency,
        Trait::Repetition,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn level(self) -> TraitLevel {
        match self {
            Trait::Engagement | Trait::Cooperativeness | Trait::Exploration | Trait::Tolerance => {
                TraitLevel::Dialogue
            }
            _ => TraitLevel::Utterance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Trait::Engagement => "engagement",
            Trait::Cooperativeness => "cooperativeness",
            Trait::Exploration => "exploration",
            Trait::Tolerance => "tolerance",
            Trait::Verbosity => "verbosity",
            Trait::Emotion => "emotion",
            Trait::Fluency => "fluency",
            Trait::Repetition => "repetition",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim();
        Trait::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(needle))
            .ok_or_else(|| ProfileError::UnknownTrait(needle.to_string()))
    }
}

impl Serialize for Trait {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Trait {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Intensity {
    Low,
    #[default]
    Neutral,
    High,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Low, Intensity::Neutral, Intensity::High];

    pub fn name(self) -> &'static str {
        match self {
            Intensity::Low => "low",
            Intensity::Neutral => "neutral",
            Intensity::High => "high",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intensity {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim();
        Intensity::ALL
            .iter()
            .copied()
            .find(|i| i.name().eq_ignore_ascii_case(needle))
            .ok_or_else(|| ProfileError::UnknownIntensity(needle.to_string()))
    }
}

impl Serialize for Intensity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Intensity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("unknown trait `{0}`")]
    UnknownTrait(String),
    #[error("unknown intensity `{0}`")]
    UnknownIntensity(String),
    #[error("trait `{0}` assigned more than once")]
    DuplicateTrait(String),
    #[error("malformed profile entry `{0}`, expected trait=intensity")]
    Malformed(String),
}

/// Assignment of an intensity to every trait. Traits not mentioned are
/// neutral; the all-neutral profile is called Regular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct UserProfile {
    intensities: [Intensity; Trait::COUNT],
}

pub const REGULAR_PROFILE_TOKEN: &str = "<profile:regular>";
pub const PROFILE_OPEN_TOKEN: &str = "<profile>";
pub const PROFILE_CLOSE_TOKEN: &str = "</profile>";

impl UserProfile {
    pub fn regular() -> Self {
        Self::default()
    }

    pub fn single(t: Trait, intensity: Intensity) -> Self {
        Self::regular().with(t, intensity)
    }

    pub fn with(mut self, t: Trait, intensity: Intensity) -> Self {
        self.intensities[t.index()] = intensity;
        self
    }

    pub fn get(&self, t: Trait) -> Intensity {
        self.intensities[t.index()]
    }

    pub fn set(&mut self, t: Trait, intensity: Intensity) {
        self.intensities[t.index()] = intensity;
    }

    pub fn is_regular(&self) -> bool {
        self.intensities.iter().all(|i| *i == Intensity::Neutral)
    }

    /// Non-neutral assignments in canonical trait order.
    pub fn active(&self) -> impl Iterator<Item = (Trait, Intensity)> + '_ {
        Trait::ALL
            .iter()
            .map(move |t| (*t, self.get(*t)))
            .filter(|(_, i)| *i != Intensity::Neutral)
    }

    pub fn active_at(&self, level: TraitLevel) -> Vec<(Trait, Intensity)> {
        self.active().filter(|(t, _)| t.level() == level).collect()
    }

    /// Parses comma-separated `trait=intensity` pairs. The empty string and
    /// `regular` both denote the Regular profile.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut profile = UserProfile::regular();
        let mut seen = [false; Trait::COUNT];
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("regular") {
            return Ok(profile);
        }
        for entry in trimmed.split(',') {
            let entry = entry.trim();
            let (name, level) = entry
                .split_once('=')
                .ok_or_else(|| ProfileError::Malformed(entry.to_string()))?;
            let t: Trait = name.parse()?;
            let intensity: Intensity = level.parse()?;
            if seen[t.index()] {
                return Err(ProfileError::DuplicateTrait(name.trim().to_string()));
            }
            seen[t.index()] = true;
            profile.set(t, intensity);
        }
        Ok(profile)
    }

    /// Inverse of [`UserProfile::parse`]; Regular renders as the empty string.
    pub fn render(&self) -> String {
        self.active()
            .map(|(t, i)| format!("{t}={i}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Filesystem-friendly name, e.g. `regular` or `engagement-high_verbosity-low`.
    pub fn label(&self) -> String {
        if self.is_regular() {
            return "regular".to_string();
        }
        self.active()
            .map(|(t, i)| format!("{t}-{i}"))
            .collect::<Vec<_>>()
            .join("_")
    }

    pub fn from_label(label: &str) -> Result<Self, ProfileError> {
        if label == "regular" {
            return Ok(Self::regular());
        }
        let spec = label
            .split('_')
            .map(|part| part.replacen('-', "=", 1))
            .collect::<Vec<_>>()
            .join(",");
        Self::parse(&spec)
    }

    /// Canonical token encoding used to ground models on a profile.
    pub fn token_sequence(&self) -> Vec<String> {
        if self.is_regular() {
            return vec![REGULAR_PROFILE_TOKEN.to_string()];
        }
        let mut tokens = vec![PROFILE_OPEN_TOKEN.to_string()];
        tokens.extend(self.active().map(|(t, i)| profile_trait_token(t, i)));
        tokens.push(PROFILE_CLOSE_TOKEN.to_string());
        tokens
    }

    /// All 3^8 profiles, Regular first.
    pub fn enumerate_all() -> Vec<UserProfile> {
        let n = 3usize.pow(Trait::COUNT as u32);
        (0..n)
            .map(|mut code| {
                let mut p = UserProfile::regular();
                for t in Trait::ALL {
                    let digit = code % 3;
                    code /= 3;
                    // digit 0 maps to Neutral so that code 0 is Regular.
                    let intensity = match digit {
                        0 => Intensity::Neutral,
                        1 => Intensity::Low,
                        _ => Intensity::High,
                    };
                    p.set(t, intensity);
                }
                p
            })
            .collect()
    }

    /// Regular plus every single-trait Low/High profile (17 in total).
    pub fn single_trait_profiles() -> Vec<UserProfile> {
        let mut out = vec![UserProfile::regular()];
        for t in Trait::ALL {
            for i in [Intensity::Low, Intensity::High] {
                out.push(UserProfile::single(t, i));
            }
        }
        out
    }
}

pub fn profile_trait_token(t: Trait, i: Intensity) -> String {
    format!("<{t}={i}>")
}

impl fmt::Display for UserProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_regular() {
            f.write_str("regular")
        } else {
            f.write_str(&self.render())
        }
    }
}

impl FromStr for UserProfile {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UserProfile::parse(s)
    }
}

impl Serialize for UserProfile {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let active: Vec<_> = self.active().collect();
        let mut map = serializer.serialize_map(Some(active.len()))?;
        for (t, i) in active {
            map.serialize_entry(t.name(), i.name())?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for UserProfile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ProfileVisitor;

        impl<'de> Visitor<'de> for ProfileVisitor {
            type Value = UserProfile;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of trait to intensity")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut profile = UserProfile::regular();
                let mut seen = [false; Trait::COUNT];
                while let Some((t, i)) = access.next_entry::<Trait, Intensity>()? {
                    if seen[t.index()] {
                        return Err(de::Error::custom(ProfileError::DuplicateTrait(
                            t.name().to_string(),
                        )));
                    }
                    seen[t.index()] = true;
                    profile.set(t, i);
                }
                Ok(profile)
            }
        }

        deserializer.deserialize_map(ProfileVisitor)
    }
}

/// One user/system exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub intent: Intent,
    #[serde(rename = "user")]
    pub user_utterance: String,
    #[serde(rename = "system")]
    pub system_response: String,
    pub system_error: bool,
    /// Set only for simulated turns whose generated tokens were malformed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Turn {
    pub fn new(intent: Intent, user: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            intent,
            user_utterance: user.into(),
            system_response: system.into(),
            system_error: false,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub task_id: String,
    pub task_title: String,
    pub profile: UserProfile,
    pub seed: u64,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn intents(&self) -> impl Iterator<Item = Intent> + '_ {
        self.turns.iter().map(|t| t.intent)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("dialogue serialization is infallible")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Writes dialogues in JSON-lines form, one per line.
pub fn write_jsonl<W: std::io::Write>(mut out: W, dialogues: &[Dialogue]) -> std::io::Result<()> {
    for d in dialogues {
        writeln!(out, "{}", d.to_json_line())?;
    }
    Ok(())
}

pub fn read_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<Dialogue>, JsonlError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = Dialogue::from_json_line(&line).map_err(|source| JsonlError::Parse {
            line: n + 1,
            source,
        })?;
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Cooking,
    Diy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub title: String,
    pub steps: Vec<String>,
    #[serde(default)]
    pub domain: Domain,
}

impl Task {
    pub fn is_valid(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} is negative or not finite: {value}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
}

/// Tolerance used when checking that a probability vector lies on the simplex.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Probability vector over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, DistributionError> {
        check_simplex(&probabilities)?;
        Ok(Self(probabilities))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self, DistributionError> {
        if weights.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DistributionError::InvalidEntry { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::NotNormalized(total));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    pub(crate) fn from_vec_unchecked(probabilities: Vec<f64>) -> Self {
        Self(probabilities)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    /// Index of the most probable entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Sharpens or flattens the distribution: p_i^(1/T), renormalized.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        if (temperature - 1.0).abs() < f64::EPSILON {
            return self.clone();
        }
        let inv = 1.0 / temperature;
        let max = self.0.iter().copied().fold(0.0, f64::max);
        // Scaling by the maximum first keeps powers of small values representable.
        let scaled: Vec<f64> = self
            .0
            .iter()
            .map(|&p| if p > 0.0 { (p / max).powf(inv) } else { 0.0 })
            .collect();
        let total: f64 = scaled.iter().sum();
        Self(scaled.into_iter().map(|p| p / total).collect())
    }

    /// Inverse-CDF draw given a uniform variate in [0, 1).
    pub fn sample_with(&self, u: f64) -> usize {
        sample_index(&self.0, u)
    }
}

/// Inverse-CDF sampling over unnormalized non-negative weights. Entries with
/// zero weight are never returned.
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i;
        if target < acc {
            return i;
        }
    }
    last_positive
}

pub fn check_simplex(probabilities: &[f64]) -> Result<(), DistributionError> {
    if probabilities.is_empty() {
        return Err(DistributionError::Empty);
    }
    for (index, &value) in probabilities.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(DistributionError::InvalidEntry { index, value });
        }
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(DistributionError::NotNormalized(total));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_match_intent_groups() {
        assert_eq!(
            intent_flags(Intent::NextStep),
            IntentFlags {
                is_stop: false,
                is_explorative: true,
                is_cooperative: true
            }
        );
        assert_eq!(
            intent_flags(Intent::Stop),
            IntentFlags {
                is_stop: true,
                is_explorative: false,
                is_cooperative: true
            }
        );
        assert_eq!(
            intent_flags(Intent::Fallback),
            IntentFlags {
                is_stop: false,
                is_explorative: false,
                is_cooperative: false
            }
        );
        let start = intent_flags(Intent::Start);
        assert!(!start.is_stop && !start.is_explorative && !start.is_cooperative);
    }

    #[test]
    fn flag_group_sizes() {
        let count = |f: fn(IntentFlags) -> bool| Intent::ALL.iter().filter(|i| f(i.flags())).count();
        assert_eq!(count(|f| f.is_stop), 1);
        assert_eq!(count(|f| f.is_explorative), 5);
        assert_eq!(count(|f| f.is_cooperative), 9);
    }

    #[test]
    fn intent_tokens_round_trip() {
        for i in Intent::ALL {
            assert_eq!(Intent::from_token(i.token()), Some(i));
            assert_eq!(Intent::from_index(i.index()), Some(i));
        }
        assert_eq!(Intent::from_token("next"), None);
    }

    #[test]
    fn traits_split_evenly_across_levels() {
        let dialogue = Trait::ALL
            .iter()
            .filter(|t| t.level() == TraitLevel::Dialogue)
            .count();
        assert_eq!(dialogue, 4);
        assert_eq!(Trait::ALL.len() - dialogue, 4);
    }

    #[test]
    fn intensity_order() {
        assert!(Intensity::Low < Intensity::Neutral);
        assert!(Intensity::Neutral < Intensity::High);
    }

    #[test]
    fn parse_profile() {
        let p = UserProfile::parse("engagement=high,verbosity=low").unwrap();
        assert_eq!(p.get(Trait::Engagement), Intensity::High);
        assert_eq!(p.get(Trait::Verbosity), Intensity::Low);
        assert_eq!(p.get(Trait::Emotion), Intensity::Neutral);
        assert_eq!(p.active().count(), 2);

        assert!(UserProfile::parse("").unwrap().is_regular());
        assert!(UserProfile::parse("Engagement=HIGH").is_ok());
    }

    #[test]
    fn parse_errors_name_the_token() {
        assert_eq!(
            UserProfile::parse("engagement=high,engagement=low"),
            Err(ProfileError::DuplicateTrait("engagement".into()))
        );
        assert_eq!(
            UserProfile::parse("patience=high"),
            Err(ProfileError::UnknownTrait("patience".into()))
        );
        assert_eq!(
            UserProfile::parse("fluency=extreme"),
            Err(ProfileError::UnknownIntensity("extreme".into()))
        );
        assert!(matches!(
            UserProfile::parse("fluency"),
            Err(ProfileError::Malformed(_))
        ));
    }

    #[test]
    fn token_sequences() {
        assert_eq!(UserProfile::regular().token_sequence(), vec!["<profile:regular>"]);
        let p = UserProfile::single(Trait::Verbosity, Intensity::High);
        assert_eq!(
            p.token_sequence(),
            vec!["<profile>", "<verbosity=high>", "</profile>"]
        );
        let a = UserProfile::parse("engagement=low,verbosity=high").unwrap();
        let b = UserProfile::parse("verbosity=high,engagement=low").unwrap();
        assert_eq!(a.token_sequence(), b.token_sequence());
    }

    #[test]
    fn labels_round_trip() {
        for p in UserProfile::single_trait_profiles() {
            assert_eq!(UserProfile::from_label(&p.label()).unwrap(), p);
        }
        let p = UserProfile::parse("engagement=high,verbosity=low").unwrap();
        assert_eq!(p.label(), "engagement-high_verbosity-low");
        assert_eq!(UserProfile::from_label(&p.label()).unwrap(), p);
    }

    #[test]
    fn single_trait_profile_count() {
        assert_eq!(UserProfile::single_trait_profiles().len(), 17);
    }

    #[test]
    fn dialogue_json_field_names() {
        let d = Dialogue {
            task_id: "t1".into(),
            task_title: "Pancakes".into(),
            profile: UserProfile::single(Trait::Fluency, Intensity::Low),
            seed: 3,
            turns: vec![Turn::new(Intent::NextStep, "next", "Step 2: mix")],
        };
        let line = d.to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["profile"]["fluency"], "low");
        assert_eq!(v["turns"][0]["intent"], "NextStep");
        assert_eq!(v["turns"][0]["user"], "next");
        assert_eq!(v["turns"][0]["system"], "Step 2: mix");
        assert_eq!(v["turns"][0]["system_error"], false);
        assert!(v["turns"][0].get("degenerate").is_none());
        assert_eq!(Dialogue::from_json_line(&line).unwrap(), d);
    }

    #[test]
    fn duplicate_trait_in_json_is_rejected() {
        let line = r#"{"engagement":"low","engagement":"high"}"#;
        assert!(serde_json::from_str::<UserProfile>(line).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(TokenDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(TokenDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(TokenDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(TokenDistribution::new(vec![]).is_err());
        let d = TokenDistribution::from_weights(vec![1.0, 3.0]).unwrap();
        assert_eq!(d.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn temperature_sharpens() {
        let d = TokenDistribution::new(vec![0.25, 0.75]).unwrap();
        let cold = d.with_temperature(0.5);
        assert!(cold.get(1) > 0.75);
        assert!(check_simplex(cold.as_slice()).is_ok());
        assert_eq!(d.with_temperature(1.0), d);
    }

    #[test]
    fn sampling_skips_zero_mass() {
        let w = [0.0, 0.3, 0.0, 0.7];
        assert_eq!(sample_index(&w, 0.0), 1);
        assert_eq!(sample_index(&w, 0.29), 1);
        assert_eq!(sample_index(&w, 0.31), 3);
        assert_eq!(sample_index(&w, 0.999_999_999), 3);
    }
}
