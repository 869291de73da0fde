//! Corpus statistics, half-standard-deviation filtering and training-set
//! balancing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::eval::metrics::{identifying_metric_with, mean, std_dev, MetricOptions};
use crate::seed;
use crate::types::{Dialogue, Intensity, Intent, Trait, UserProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of every identifying metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub metrics: BTreeMap<Trait, MetricStats>,
}

impl CorpusStats {
    pub fn get(&self, t: Trait) -> MetricStats {
        self.metrics[&t]
    }
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> Result<CorpusStats, CorpusError> {
    corpus_stats_with(dialogues, MetricOptions::default())
}

pub fn corpus_stats_with(
    dialogues: &[Dialogue],
    options: MetricOptions,
) -> Result<CorpusStats, CorpusError> {
    if dialogues.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let metrics = Trait::ALL
        .iter()
        .map(|t| {
            let values: Vec<f64> = dialogues
                .iter()
                .map(|d| identifying_metric_with(d, *t, options))
                .collect();
            let stats = MetricStats {
                mean: mean(&values).expect("non-empty"),
                std: std_dev(&values).expect("non-empty"),
            };
            (*t, stats)
        })
        .collect();
    Ok(CorpusStats {
        count: dialogues.len(),
        metrics,
    })
}

/// Whether one dialogue lies on the `intensity` side of the Regular mean by
/// at least half a standard deviation. A zero deviation falls back to a
/// strict comparison with the mean.
pub fn passes_filter(dialogue: &Dialogue, stats: &CorpusStats, t: Trait, intensity: Intensity) -> bool {
    passes_filter_with(dialogue, stats, t, intensity, MetricOptions::default())
}

pub fn passes_filter_with(
    dialogue: &Dialogue,
    stats: &CorpusStats,
    t: Trait,
    intensity: Intensity,
    options: MetricOptions,
) -> bool {
    let MetricStats { mean, std } = stats.get(t);
    let v = identifying_metric_with(dialogue, t, options);
    match (intensity, std > 0.0) {
        (Intensity::Neutral, _) => true,
        (Intensity::High, true) => v >= mean + 0.5 * std,
        (Intensity::Low, true) => v <= mean - 0.5 * std,
        (Intensity::High, false) => v > mean,
        (Intensity::Low, false) => v < mean,
    }
}

/// Keeps the dialogues that pass [`passes_filter`] for `t` at `intensity`.
pub fn filter_corpus(
    dialogues: &[Dialogue],
    regular_stats: &CorpusStats,
    t: Trait,
    intensity: Intensity,
) -> Vec<Dialogue> {
    if intensity != Intensity::Neutral && regular_stats.get(t).std == 0.0 {
        log::debug!("zero deviation for {t}; filtering strictly around the mean");
    }
    dialogues
        .iter()
        .filter(|d| passes_filter(d, regular_stats, t, intensity))
        .cloned()
        .collect()
}

/// Probability with which a `NextStep` turn is kept as a training example.
pub const NEXT_STEP_RETENTION: f64 = 0.5;

/// Profile-balanced training dialogues. `NextStep` turns are subsampled when
/// the dialogues are turned into per-turn examples; see
/// [`BalancedSet::keeps_turn`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSet {
    pub dialogues: Vec<Dialogue>,
    pub undersample_next_step: bool,
    pub seed: u64,
}

impl BalancedSet {
    /// Whether turn `index` of `dialogue` is used as a training example.
    /// The decision depends only on the set seed, the dialogue seed and the
    /// turn index, so every model trained on the set sees the same examples.
    pub fn keeps_turn(&self, dialogue: &Dialogue, index: usize) -> bool {
        !self.undersample_next_step
            || dialogue.turns[index].intent != Intent::NextStep
            || next_step_retained(self.seed, dialogue.seed, index)
    }

    /// Leaves every turn in place; used for models trained on raw corpora.
    pub fn unbalanced(dialogues: Vec<Dialogue>) -> Self {
        Self {
            dialogues,
            undersample_next_step: false,
            seed: 0,
        }
    }
}

pub fn next_step_retained(set_seed: u64, dialogue_seed: u64, index: usize) -> bool {
    let stream = seed::derive(dialogue_seed, index as u64);
    seed::unit(set_seed, stream) < NEXT_STEP_RETENTION
}

/// Subsamples every profile group to the size of the smallest one. Groups
/// keep their first-seen order; dialogues inside a group keep their
/// relative order.
pub fn balance_training_set(dialogues: Vec<Dialogue>, seed: u64) -> BalancedSet {
    let mut order: Vec<UserProfile> = Vec::new();
    let mut groups: BTreeMap<UserProfile, Vec<Dialogue>> = BTreeMap::new();
    for d in dialogues {
        if !groups.contains_key(&d.profile) {
            order.push(d.profile);
        }
        groups.entry(d.profile).or_default().push(d);
    }
    let min = groups.values().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(min * groups.len());
    for profile in order {
        let group = groups.remove(&profile).expect("group present");
        if group.len() == min {
            out.extend(group);
            continue;
        }
        let mut rng = seed::rng(seed::derive(seed, seed::label_hash(&profile.label())));
        let mut picked: Vec<usize> = (0..group.len()).collect();
        picked.shuffle(&mut rng);
        picked.truncate(min);
        picked.sort_unstable();
        let mut group: Vec<Option<Dialogue>> = group.into_iter().map(Some).collect();
        out.extend(picked.into_iter().map(|k| group[k].take().expect("picked once")));
    }
    BalancedSet {
        dialogues: out,
        undersample_next_step: true,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Turn;

    fn with_turns(n: usize, profile: UserProfile, seed: u64) -> Dialogue {
        Dialogue {
            task_id: "t".into(),
            task_title: "T".into(),
            profile,
            seed,
            turns: (0..n).map(|_| Turn::new(Intent::NextStep, "next", "s")).collect(),
        }
    }

    #[test]
    fn stats_use_population_deviation() {
        let r = UserProfile::regular();
        let s = corpus_stats(&[with_turns(5, r, 0)]).unwrap();
        assert_eq!(s.get(Trait::Engagement), MetricStats { mean: 5.0, std: 0.0 });
        let s = corpus_stats(&[with_turns(4, r, 0), with_turns(6, r, 1)]).unwrap();
        assert_eq!(s.get(Trait::Engagement), MetricStats { mean: 5.0, std: 1.0 });
        assert!(matches!(corpus_stats(&[]), Err(CorpusError::EmptyCorpus)));
        assert_eq!(s.count, 2);
    }

    #[test]
    fn filter_thresholds() {
        let r = UserProfile::regular();
        let mut stats = corpus_stats(&[with_turns(5, r, 0)]).unwrap();
        stats.metrics.insert(Trait::Engagement, MetricStats { mean: 9.38, std: 4.4 });
        let ds: Vec<Dialogue> = (1..=20).map(|n| with_turns(n, r, n as u64)).collect();
        let high = filter_corpus(&ds, &stats, Trait::Engagement, Intensity::High);
        // 9.38 + 2.2 = 11.58
        assert!(high.iter().all(|d| d.turns.len() >= 12));
        assert_eq!(high.len(), 9);
        let low = filter_corpus(&ds, &stats, Trait::Engagement, Intensity::Low);
        assert!(low.iter().all(|d| d.turns.len() <= 7));
        assert_eq!(filter_corpus(&ds, &stats, Trait::Engagement, Intensity::Neutral), ds);
        assert!(filter_corpus(&[], &stats, Trait::Engagement, Intensity::High).is_empty());
    }

    #[test]
    fn zero_deviation_uses_strict_comparison() {
        let r = UserProfile::regular();
        let stats = corpus_stats(&[with_turns(5, r, 0)]).unwrap();
        let ds = vec![with_turns(4, r, 0), with_turns(5, r, 1), with_turns(6, r, 2)];
        let high = filter_corpus(&ds, &stats, Trait::Engagement, Intensity::High);
        assert_eq!(high.len(), 1);
        assert_eq!(high[0].turns.len(), 6);
        let low = filter_corpus(&ds, &stats, Trait::Engagement, Intensity::Low);
        assert_eq!(low[0].turns.len(), 4);
    }

    #[test]
    fn balancing_equalizes_groups() {
        let a = UserProfile::single(Trait::Engagement, Intensity::Low);
        let b = UserProfile::single(Trait::Engagement, Intensity::High);
        let c = UserProfile::regular();
        let mut ds = Vec::new();
        for (p, n) in [(a, 100), (b, 80), (c, 120)] {
            for k in 0..n {
                ds.push(with_turns(2, p, k));
            }
        }
        let set = balance_training_set(ds, 3);
        for p in [a, b, c] {
            assert_eq!(set.dialogues.iter().filter(|d| d.profile == p).count(), 80);
        }
        assert!(set.undersample_next_step);
    }

    #[test]
    fn single_group_is_unchanged() {
        let p = UserProfile::regular();
        let ds: Vec<Dialogue> = (0..10).map(|k| with_turns(3, p, k)).collect();
        let set = balance_training_set(ds.clone(), 1);
        assert_eq!(set.dialogues, ds);
        assert!(set.undersample_next_step);
    }

    #[test]
    fn next_step_share_after_undersampling() {
        // 37 NextStep turns out of every 100, as in the reference logs.
        let p = UserProfile::regular();
        let mut ds = Vec::new();
        for k in 0..2000u64 {
            let mut d = with_turns(100, p, k);
            for t in d.turns.iter_mut().skip(37) {
                t.intent = Intent::Question;
            }
            ds.push(d);
        }
        let set = balance_training_set(ds, 11);
        let (mut next, mut kept) = (0usize, 0usize);
        for d in &set.dialogues {
            for k in 0..d.turns.len() {
                if set.keeps_turn(d, k) {
                    kept += 1;
                    next += (d.turns[k].intent == Intent::NextStep) as usize;
                }
            }
        }
        let expected = 0.37 * 0.5 / (0.37 * 0.5 + 0.63);
        let share = next as f64 / kept as f64;
        assert!((share - expected).abs() < 0.005, "{share} vs {expected}");
    }
}
