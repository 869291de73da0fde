//! Trend, distance and quality summaries over sets of dialogues.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::distance::{ks_distance, wasserstein_1d, DistanceError};
use super::metrics::{mean, MetricKind, MetricOptions, MetricSample};
use crate::types::{Dialogue, Intensity, Trait};

/// Mean identifying metric per intensity and whether the means increase
/// strictly from Low to High.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub method: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub low: Option<f64>,
    pub regular: Option<f64>,
    pub high: Option<f64>,
    /// Strict ordering over the intensities present.
    pub increasing: bool,
    /// Fewer than three intensities were available.
    pub partial: bool,
}

impl TrendVerdict {
    pub fn means(&self) -> [Option<f64>; 3] {
        [self.low, self.regular, self.high]
    }
}

/// Builds a trend verdict from dialogues grouped by intensity. The Neutral
/// group is the Regular run.
pub fn trend_report(
    method: &str,
    groups: &[(Intensity, &[Dialogue])],
    t: Trait,
    options: MetricOptions,
) -> TrendVerdict {
    let mean_of = |target: Intensity| {
        groups
            .iter()
            .find(|(i, d)| *i == target && !d.is_empty())
            .and_then(|(_, d)| MetricSample::collect(d, t, options).mean())
    };
    let low = mean_of(Intensity::Low);
    let regular = mean_of(Intensity::Neutral);
    let high = mean_of(Intensity::High);
    let present: Vec<f64> = [low, regular, high].into_iter().flatten().collect();
    let increasing = present.len() >= 2 && present.windows(2).all(|w| w[0] < w[1]);
    if present.len() < 3 {
        log::warn!("{method}: trend for {t} computed on {} intensities", present.len());
    }
    TrendVerdict {
        method: method.to_string(),
        trait_: t,
        low,
        regular,
        high,
        increasing,
        partial: present.len() < 3,
    }
}

/// Distance between generated and reference identifying-metric samples:
/// Wasserstein for discrete traits, K-S for continuous ones.
pub fn distance_report(
    generated: &[Dialogue],
    reference: &[Dialogue],
    t: Trait,
    options: MetricOptions,
) -> Result<f64, DistanceError> {
    let g = MetricSample::collect(generated, t, options);
    let r = MetricSample::collect(reference, t, options);
    match MetricKind::of(t) {
        MetricKind::Discrete => wasserstein_1d(&g.values, &r.values),
        MetricKind::Continuous => ks_distance(&g.values, &r.values),
    }
}

fn normalize(utterance: &str) -> String {
    utterance.trim().to_lowercase()
}

/// Share of generated user utterances that never occur in the training data.
pub fn uniqueness_rate(generated: &[Dialogue], training: &[Dialogue]) -> f64 {
    let seen: HashSet<String> = training
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| normalize(&t.user_utterance)))
        .collect();
    let mut total = 0usize;
    let mut novel = 0usize;
    for turn in generated.iter().flat_map(|d| &d.turns) {
        total += 1;
        if !seen.contains(&normalize(&turn.user_utterance)) {
            novel += 1;
        }
    }
    if total == 0 {
        log::warn!("uniqueness rate of an empty generation is reported as 0");
        return 0.0;
    }
    novel as f64 / total as f64
}

/// Share of turns flagged as degenerate.
pub fn degeneration_rate(dialogues: &[Dialogue]) -> f64 {
    let (bad, total) = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .fold((0usize, 0usize), |(b, n), t| (b + t.degenerate as usize, n + 1));
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub method: String,
    #[serde(rename = "trait")]
    pub trait_: Trait,
    pub intensity: Intensity,
    pub kind: MetricKind,
    /// `None` when no reference was available.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEntry {
    pub method: String,
    pub degeneration_rate: f64,
    pub uniqueness_rate: Option<f64>,
    pub dialogues: usize,
}

/// Per-trait means for one simulated multi-trait profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub method: String,
    pub profile: String,
    pub means: BTreeMap<Trait, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trends: Vec<TrendVerdict>,
    pub distances: Vec<DistanceEntry>,
    pub quality: Vec<QualityEntry>,
    pub profiles: Vec<ProfileEntry>,
    pub notes: Vec<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.trends.is_empty() {
            out.push_str("Trends (mean identifying metric)\n");
            let _ = writeln!(
                out,
                "{:<10} {:<16} {:>10} {:>10} {:>10}  verdict",
                "method", "trait", "low", "regular", "high"
            );
            for t in &self.trends {
                let verdict = match (t.increasing, t.partial) {
                    (true, false) => "PASS",
                    (true, true) => "PASS (partial)",
                    (false, false) => "FAIL",
                    (false, true) => "FAIL (partial)",
                };
                let _ = writeln!(
                    out,
                    "{:<10} {:<16} {:>10} {:>10} {:>10}  {}",
                    t.method,
                    t.trait_.name(),
                    cell(t.low),
                    cell(t.regular),
                    cell(t.high),
                    verdict
                );
            }
            out.push('\n');
        }
        if !self.distances.is_empty() {
            out.push_str("Distances to reference\n");
            let _ = writeln!(
                out,
                "{:<10} {:<16} {:<10} {:<12} {:>10}",
                "method", "trait", "intensity", "metric", "distance"
            );
            for d in &self.distances {
                let metric = match d.kind {
                    MetricKind::Discrete => "wasserstein",
                    MetricKind::Continuous => "ks",
                };
                let _ = writeln!(
                    out,
                    "{:<10} {:<16} {:<10} {:<12} {:>10}",
                    d.method,
                    d.trait_.name(),
                    d.intensity.name(),
                    metric,
                    cell(d.distance)
                );
            }
            out.push('\n');
        }
        if !self.quality.is_empty() {
            out.push_str("Quality\n");
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>14} {:>12}",
                "method", "dialogues", "degeneration", "uniqueness"
            );
            for q in &self.quality {
                let _ = writeln!(
                    out,
                    "{:<10} {:>10} {:>14} {:>12}",
                    q.method,
                    q.dialogues,
                    cell(Some(q.degeneration_rate)),
                    cell(q.uniqueness_rate)
                );
            }
            out.push('\n');
        }
        if !self.profiles.is_empty() {
            out.push_str("Multi-trait profiles\n");
            for p in &self.profiles {
                let means: Vec<String> = p
                    .means
                    .iter()
                    .map(|(t, v)| format!("{}={v:.4}", t.name()))
                    .collect();
                let _ = writeln!(out, "{:<10} {:<40} {}", p.method, p.profile, means.join(" "));
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Equal-width histogram over `[min, max]` of the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram { edges, counts }
}

/// Mean of `t` over `dialogues`, if any.
pub fn mean_metric(dialogues: &[Dialogue], t: Trait, options: MetricOptions) -> Option<f64> {
    mean(&MetricSample::collect(dialogues, t, options).values)
}
