//! Per-dialogue identifying metrics, one per trait.

use serde::{Deserialize, Serialize};

use crate::scorers::{overlap_score, word_count, Scorers};
use crate::types::{Dialogue, Intent, Trait};

/// Whether a metric is compared with the Wasserstein distance (discrete
/// counts) or the K-S distance (continuous rates and scores).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Discrete,
    Continuous,
}

impl MetricKind {
    pub fn of(t: Trait) -> MetricKind {
        match t {
            Trait::Engagement | Trait::Verbosity => MetricKind::Discrete,
            _ => MetricKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Count `NextStep` toward the exploration rate.
    pub exploration_counts_next_step: bool,
}

/// One metric value per dialogue for a single trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub values: Vec<f64>,
    pub kind: MetricKind,
}

impl MetricSample {
    pub fn collect(dialogues: &[Dialogue], t: Trait, options: MetricOptions) -> Self {
        Self {
            trait_: t,
            values: dialogues
                .iter()
                .map(|d| identifying_metric_with(d, t, options))
                .collect(),
            kind: MetricKind::of(t),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        mean(&self.values)
    }
}

fn rate(dialogue: &Dialogue, select: impl Fn(Intent) -> bool) -> f64 {
    if dialogue.turns.is_empty() {
        return 0.0;
    }
    let hits = dialogue.turns.iter().filter(|t| select(t.intent)).count();
    hits as f64 / dialogue.turns.len() as f64
}

fn mean_over_turns(dialogue: &Dialogue, f: impl Fn(&str) -> f64) -> f64 {
    if dialogue.turns.is_empty() {
        return 0.0;
    }
    let total: f64 = dialogue.turns.iter().map(|t| f(&t.user_utterance)).sum();
    total / dialogue.turns.len() as f64
}

/// Identifying metric of `t` with default options.
pub fn identifying_metric(dialogue: &Dialogue, t: Trait) -> f64 {
    identifying_metric_with(dialogue, t, MetricOptions::default())
}

/// Identifying metric of `t` for one dialogue:
///
/// | trait | value |
/// |---|---|
/// | engagement | number of turns |
/// | cooperativeness | share of turns with a cooperative intent |
/// | exploration | share of turns with an explorative intent other than `NextStep` |
/// | tolerance | system errors not answered by `Stop` on the next turn, per turn |
/// | verbosity | mean words per user utterance |
/// | emotion, fluency | mean scorer value per user utterance |
/// | repetition | mean word overlap of consecutive user utterances |
pub fn identifying_metric_with(dialogue: &Dialogue, t: Trait, options: MetricOptions) -> f64 {
    let scorers = Scorers::bundled();
    match t {
        Trait::Engagement => dialogue.turns.len() as f64,
        Trait::Cooperativeness => rate(dialogue, |i| i.flags().is_cooperative),
        Trait::Exploration => rate(dialogue, |i| {
            i.flags().is_explorative && (options.exploration_counts_next_step || i != Intent::NextStep)
        }),
        Trait::Tolerance => {
            let n = dialogue.turns.len();
            if n == 0 {
                return 0.0;
            }
            let tolerated = (0..n)
                .filter(|&k| {
                    dialogue.turns[k].system_error
                        && dialogue
                            .turns
                            .get(k + 1)
                            .is_none_or(|next| next.intent != Intent::Stop)
                })
                .count();
            tolerated as f64 / n as f64
        }
        Trait::Verbosity => mean_over_turns(dialogue, |u| word_count(u) as f64),
        Trait::Emotion => mean_over_turns(dialogue, |u| scorers.emotion(u)),
        Trait::Fluency => mean_over_turns(dialogue, |u| scorers.fluency(u)),
        Trait::Repetition => {
            let pairs = dialogue.turns.windows(2);
            let n = pairs.len();
            if n == 0 {
                return 0.0;
            }
            let total: f64 = pairs
                .map(|w| overlap_score(&w[1].user_utterance, &w[0].user_utterance))
                .sum();
            total / n as f64
        }
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Turn, UserProfile};

    fn dialogue(turns: Vec<Turn>) -> Dialogue {
        Dialogue {
            task_id: "t".into(),
            task_title: "T".into(),
            profile: UserProfile::regular(),
            seed: 0,
            turns,
        }
    }

    fn from_intents(intents: &[Intent]) -> Dialogue {
        dialogue(intents.iter().map(|i| Turn::new(*i, "ok", "sys")).collect())
    }

    #[test]
    fn cooperativeness_counts_flagged_intents() {
        use Intent::*;
        let d = from_intents(&[Start, NextStep, ChitChat, Stop]);
        assert_eq!(identifying_metric(&d, Trait::Cooperativeness), 0.5);
    }

    #[test]
    fn exploration_excludes_next_step_by_default() {
        use Intent::*;
        let d = from_intents(&[Start, NextStep, Question, Stop]);
        assert_eq!(identifying_metric(&d, Trait::Exploration), 0.25);
        let with = MetricOptions {
            exploration_counts_next_step: true,
        };
        assert_eq!(identifying_metric_with(&d, Trait::Exploration, with), 0.5);
    }

    #[test]
    fn engagement_is_turn_count() {
        let d = from_intents(&[Intent::NextStep; 5]);
        assert_eq!(identifying_metric(&d, Trait::Engagement), 5.0);
    }

    #[test]
    fn tolerance_ignores_errors_answered_by_stop() {
        let mut turns: Vec<Turn> = [Intent::Start, Intent::NextStep, Intent::Stop, Intent::NextStep]
            .iter()
            .map(|i| Turn::new(*i, "ok", "sys"))
            .collect();
        // Error at turn 0 is tolerated, turn 1 is answered by Stop.
        turns[0].system_error = true;
        turns[1].system_error = true;
        let d = dialogue(turns);
        assert_eq!(identifying_metric(&d, Trait::Tolerance), 0.25);
    }

    #[test]
    fn utterance_metrics() {
        let d = dialogue(vec![
            Turn::new(Intent::NextStep, "go to the next step", "s"),
            Turn::new(Intent::NextStep, "next step please", "s"),
        ]);
        assert_eq!(identifying_metric(&d, Trait::Verbosity), 4.0);
        // {next, step} shared; union {go, to, the, next, step, please}.
        assert!((identifying_metric(&d, Trait::Repetition) - 2.0 / 6.0).abs() < 1e-12);
        let single = dialogue(vec![Turn::new(Intent::Stop, "stop", "s")]);
        assert_eq!(identifying_metric(&single, Trait::Repetition), 0.0);
    }

    #[test]
    fn emotion_and_fluency_average_scores() {
        let d = dialogue(vec![
            Turn::new(Intent::Stop, "uhh read step again", "s"),
            Turn::new(Intent::Stop, "next next", "s"),
        ]);
        assert!((identifying_metric(&d, Trait::Fluency) - (0.75 + 0.8) / 2.0).abs() < 1e-12);
        let e = (crate::scorers::emotion_score("uhh read step again")
            + crate::scorers::emotion_score("next next"))
            / 2.0;
        assert_eq!(identifying_metric(&d, Trait::Emotion), e);
    }

    #[test]
    fn population_std() {
        assert_eq!(std_dev(&[4.0, 6.0]), Some(1.0));
        assert_eq!(std_dev(&[5.0]), Some(0.0));
        assert_eq!(std_dev(&[]), None);
    }

    #[test]
    fn metric_kinds() {
        for t in Trait::ALL {
            let expect = matches!(t, Trait::Engagement | Trait::Verbosity);
            assert_eq!(MetricKind::of(t) == MetricKind::Discrete, expect);
        }
    }
}
