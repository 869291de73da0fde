//! Intent transition graph and the dialogue-level trait edits applied to it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;
use super::CorpusError;
use crate::types::{Intensity, Intent, Trait, UserProfile, SIMPLEX_TOLERANCE};

/// Probability vector over next intents, indexed by [`Intent::index`].
pub type IntentRow = [f64; Intent::COUNT];

/// Conversation position the next intent is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum State {
    /// Before the first user turn.
    Begin,
    After(Intent),
}

impl State {
    fn index(self) -> usize {
        match self {
            State::Begin => 0,
            State::After(i) => 1 + i.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            State::Begin => "Begin",
            State::After(i) => i.name(),
        }
    }

    fn from_name(name: &str) -> Option<State> {
        if name.eq_ignore_ascii_case("begin") {
            Some(State::Begin)
        } else {
            Intent::from_name(name).map(State::After)
        }
    }

    /// Every state, `Begin` first.
    pub fn all() -> impl Iterator<Item = State> {
        std::iter::once(State::Begin).chain(Intent::ALL.iter().map(|i| State::After(*i)))
    }
}

/// Directed graph of intent transition probabilities. Every row is a point
/// on the simplex; the row after `Stop` is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    rows: Vec<IntentRow>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TransitionGraph {
    /// Builds a graph from explicit rows, validating every row. States
    /// without a row are rejected, except `Stop`, which becomes absorbing.
    pub fn from_rows(rows: impl IntoIterator<Item = (State, IntentRow)>) -> Result<Self, CorpusError> {
        let mut slots: Vec<Option<IntentRow>> = vec![None; 1 + Intent::COUNT];
        for (state, row) in rows {
            validate_row(state, &row)?;
            slots[state.index()] = Some(row);
        }
        let mut out = Vec::with_capacity(slots.len());
        for state in State::all() {
            match slots[state.index()] {
                Some(row) => out.push(row),
                None if state == State::After(Intent::Stop) => out.push(point_mass(Intent::Stop)),
                None => return Err(CorpusError::MissingRow(state.name().to_string())),
            }
        }
        Ok(Self { rows: out })
    }

    /// Parses the JSON graph asset: `{"rows": {state: {intent: p}}}`.
    pub fn from_json_str(text: &str) -> Result<Self, CorpusError> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut rows = Vec::new();
        for (state_name, entries) in file.rows {
            let state = State::from_name(&state_name)
                .ok_or_else(|| CorpusError::UnknownName(state_name.clone()))?;
            let mut row = [0.0; Intent::COUNT];
            for (intent_name, p) in entries {
                let intent = Intent::from_name(&intent_name)
                    .ok_or_else(|| CorpusError::UnknownName(intent_name.clone()))?;
                row[intent.index()] = p;
            }
            rows.push((state, row));
        }
        Self::from_rows(rows)
    }

    pub fn to_json_string(&self) -> String {
        let mut rows = BTreeMap::new();
        for state in State::all() {
            let row = self.row(state);
            let entries: BTreeMap<String, f64> = Intent::ALL
                .iter()
                .filter(|i| row[i.index()] > 0.0)
                .map(|i| (i.name().to_string(), row[i.index()]))
                .collect();
            rows.insert(state.name().to_string(), entries);
        }
        serde_json::to_string_pretty(&GraphFile { rows }).expect("graph serialization")
    }

    pub fn row(&self, state: State) -> &IntentRow {
        &self.rows[state.index()]
    }

    pub fn states(&self) -> impl Iterator<Item = State> {
        State::all()
    }

    fn map_rows(
        &self,
        mut edit: impl FnMut(State, &IntentRow) -> Result<IntentRow, CorpusError>,
    ) -> Result<Self, CorpusError> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for state in State::all() {
            if state == State::After(Intent::Stop) {
                rows.push(*self.row(state));
            } else {
                rows.push(edit(state, self.row(state))?);
            }
        }
        Ok(Self { rows })
    }
}

fn point_mass(intent: Intent) -> IntentRow {
    let mut row = [0.0; Intent::COUNT];
    row[intent.index()] = 1.0;
    row
}

fn validate_row(state: State, row: &IntentRow) -> Result<(), CorpusError> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(CorpusError::InvalidRow {
            state: state.name().to_string(),
            reason: "negative or non-finite probability".into(),
        });
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(CorpusError::InvalidRow {
            state: state.name().to_string(),
            reason: format!("row sums to {total}"),
        });
    }
    Ok(())
}

fn renormalize(state: &str, row: &mut IntentRow) -> Result<(), CorpusError> {
    let total: f64 = row.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(CorpusError::DegenerateRow(state.to_string()));
    }
    row.iter_mut().for_each(|p| *p /= total);
    Ok(())
}

/// Multiplies the entries of `intents` (selected by predicate) by `factor`,
/// without renormalizing.
pub fn scale_intents(row: &mut IntentRow, factor: f64, select: impl Fn(Intent) -> bool) {
    for intent in Intent::ALL {
        if select(intent) {
            row[intent.index()] *= factor;
        }
    }
}

/// Which way exploration edits move probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationDirection {
    /// High exploration: from the top-k intents to explorative intents
    /// outside the top-k.
    TowardExplorative,
    /// Low exploration: from explorative intents outside the top-k back to
    /// the top-k intents.
    TowardTopK,
}

impl ExplorationDirection {
    pub fn for_intensity(intensity: Intensity) -> Option<Self> {
        match intensity {
            Intensity::High => Some(Self::TowardExplorative),
            Intensity::Low => Some(Self::TowardTopK),
            Intensity::Neutral => None,
        }
    }
}

/// The `k` most probable intents; ties go to the earlier intent.
pub fn top_k_intents(row: &IntentRow, k: usize) -> Vec<Intent> {
    let mut order: Vec<Intent> = Intent::ALL.to_vec();
    order.sort_by(|a, b| {
        row[b.index()]
            .partial_cmp(&row[a.index()])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index().cmp(&b.index()))
    });
    order.truncate(k);
    order
}

/// Moves a fraction `factor` of the source set's mass to the receiving set,
/// sharing it proportionally to the receivers' current probabilities. The
/// source set is the top-k intents when moving toward explorative intents,
/// and the explorative intents outside the top-k otherwise. Total mass is
/// conserved, so the row needs no renormalization. If the receiving set
/// carries no mass the row is returned unchanged.
pub fn apply_exploration(
    row: &IntentRow,
    direction: ExplorationDirection,
    factor: f64,
    k: usize,
) -> IntentRow {
    let top = top_k_intents(row, k);
    let in_top = |i: Intent| top.contains(&i);
    let explorative_rest = |i: Intent| i.flags().is_explorative && !in_top(i);

    type Pred<'a> = Box<dyn Fn(Intent) -> bool + 'a>;
    let (is_source, is_receiver): (Pred<'_>, Pred<'_>) =
        match direction {
            ExplorationDirection::TowardExplorative => (Box::new(in_top), Box::new(explorative_rest)),
            ExplorationDirection::TowardTopK => (Box::new(explorative_rest), Box::new(in_top)),
        };

    let mass = |pred: &dyn Fn(Intent) -> bool| -> f64 {
        Intent::ALL
            .iter()
            .filter(|i| pred(**i))
            .map(|i| row[i.index()])
            .sum()
    };
    let source_mass = mass(&*is_source);
    let receiver_mass = mass(&*is_receiver);
    if receiver_mass <= 0.0 || source_mass <= 0.0 {
        log::debug!("exploration edit skipped: empty source or receiving set");
        return *row;
    }

    let moved = source_mass * factor;
    let mut out = *row;
    for intent in Intent::ALL {
        let p = row[intent.index()];
        if is_source(intent) {
            out[intent.index()] = p - moved * (p / source_mass);
        } else if is_receiver(intent) {
            out[intent.index()] = p + moved * (p / receiver_mass);
        }
    }
    out
}

/// Multiplies the stop probability by `factor^n_errors` and renormalizes.
pub fn apply_tolerance(row: &IntentRow, factor: f64, n_errors: u32) -> Result<IntentRow, CorpusError> {
    if n_errors == 0 {
        return Ok(*row);
    }
    let mut out = *row;
    scale_intents(&mut out, factor.powi(n_errors as i32), |i| i.flags().is_stop);
    renormalize("tolerance", &mut out)?;
    Ok(out)
}

/// Applies the profile's engagement, cooperativeness and exploration
/// settings to every row. Edits run in canonical trait order and each row is
/// renormalized once at the end. Tolerance is applied per turn during
/// generation instead.
pub fn apply_dialogue_level_traits(
    profile: &UserProfile,
    graph: &TransitionGraph,
    config: &GenerationConfig,
) -> Result<TransitionGraph, CorpusError> {
    let engagement = profile.get(Trait::Engagement);
    let cooperativeness = profile.get(Trait::Cooperativeness);
    let exploration = profile.get(Trait::Exploration);
    if engagement == Intensity::Neutral
        && cooperativeness == Intensity::Neutral
        && exploration == Intensity::Neutral
    {
        return Ok(graph.clone());
    }

    graph.map_rows(|state, row| {
        let mut out = *row;
        if let Some(f) = config.dialogue_factor(Trait::Engagement, engagement) {
            scale_intents(&mut out, f, |i| i.flags().is_stop);
        }
        if let Some(f) = config.dialogue_factor(Trait::Cooperativeness, cooperativeness) {
            scale_intents(&mut out, f, |i| !i.flags().is_cooperative);
        }
        if let (Some(direction), Some(f)) = (
            ExplorationDirection::for_intensity(exploration),
            config.dialogue_factor(Trait::Exploration, exploration),
        ) {
            out = apply_exploration(&out, direction, f, config.exploration_top_k);
        }
        renormalize(state.name(), &mut out)?;
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(entries: &[(Intent, f64)]) -> IntentRow {
        let mut r = [0.0; Intent::COUNT];
        for (i, p) in entries {
            r[i.index()] = *p;
        }
        r
    }

    fn uniform_graph_with(first: IntentRow) -> TransitionGraph {
        TransitionGraph::from_rows(
            State::all()
                .filter(|s| *s != State::After(Intent::Stop))
                .map(|s| (s, first)),
        )
        .unwrap()
    }

    fn assert_row_close(actual: &IntentRow, expected: &[(Intent, f64)], tol: f64) {
        let e = row(expected);
        for i in Intent::ALL {
            assert!(
                (actual[i.index()] - e[i.index()]).abs() < tol,
                "{i}: {} vs {}",
                actual[i.index()],
                e[i.index()]
            );
        }
    }

    #[test]
    fn regular_profile_is_identity() {
        let g = TransitionGraph::from_json_str(crate::assets::GRAPH_JSON).unwrap();
        let out =
            apply_dialogue_level_traits(&UserProfile::regular(), &g, &GenerationConfig::default())
                .unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn engagement_low_scales_stop() {
        use Intent::*;
        let g = uniform_graph_with(row(&[(NextStep, 0.7), (Stop, 0.1), (ChitChat, 0.2)]));
        let p = UserProfile::single(Trait::Engagement, Intensity::Low);
        let out = apply_dialogue_level_traits(&p, &g, &GenerationConfig::default()).unwrap();
        // Pre-normalization {0.7, 0.2, 0.2}.
        assert_row_close(
            out.row(State::Begin),
            &[(NextStep, 0.7 / 1.1), (Stop, 0.2 / 1.1), (ChitChat, 0.2 / 1.1)],
            1e-12,
        );
        assert_row_close(
            out.row(State::Begin),
            &[(NextStep, 0.6364), (Stop, 0.1818), (ChitChat, 0.1818)],
            1e-4,
        );
    }

    #[test]
    fn cooperativeness_high_scales_uncooperative() {
        use Intent::*;
        let g = uniform_graph_with(row(&[(NextStep, 0.7), (Stop, 0.1), (ChitChat, 0.2)]));
        let p = UserProfile::single(Trait::Cooperativeness, Intensity::High);
        let out = apply_dialogue_level_traits(&p, &g, &GenerationConfig::default()).unwrap();
        assert_row_close(
            out.row(State::After(NextStep)),
            &[(NextStep, 0.7 / 0.9), (Stop, 0.1 / 0.9), (ChitChat, 0.1 / 0.9)],
            1e-12,
        );
        assert_row_close(
            out.row(State::After(NextStep)),
            &[(NextStep, 0.7778), (Stop, 0.1111), (ChitChat, 0.1111)],
            1e-4,
        );
    }

    #[test]
    fn stop_row_stays_absorbing() {
        let g = TransitionGraph::from_json_str(crate::assets::GRAPH_JSON).unwrap();
        let p = UserProfile::parse("engagement=low,cooperativeness=low,exploration=high").unwrap();
        let out = apply_dialogue_level_traits(&p, &g, &GenerationConfig::default()).unwrap();
        assert_eq!(out.row(State::After(Intent::Stop))[Intent::Stop.index()], 1.0);
    }

    #[test]
    fn tolerance_examples() {
        use Intent::*;
        let r = row(&[(NextStep, 0.8), (Stop, 0.2)]);
        assert_eq!(apply_tolerance(&r, 10.0, 0).unwrap(), r);
        let one = apply_tolerance(&r, 10.0, 1).unwrap();
        assert_row_close(&one, &[(NextStep, 0.8 / 2.8), (Stop, 2.0 / 2.8)], 1e-12);
        assert_row_close(&one, &[(NextStep, 0.2857), (Stop, 0.7143)], 1e-4);
        let two = apply_tolerance(&r, 10.0, 2).unwrap();
        assert_row_close(&two, &[(NextStep, 0.0385), (Stop, 0.9615)], 1e-4);
    }

    #[test]
    fn tolerance_on_zero_row_is_degenerate() {
        let r = [0.0; Intent::COUNT];
        assert!(matches!(
            apply_tolerance(&r, 10.0, 1),
            Err(CorpusError::DegenerateRow(_))
        ));
    }

    #[test]
    fn exploration_high_example() {
        use Intent::*;
        let r = row(&[(NextStep, 0.6), (Stop, 0.2), (Question, 0.1), (ChitChat, 0.1)]);
        let out = apply_exploration(&r, ExplorationDirection::TowardExplorative, 0.2, 1);
        assert_row_close(
            &out,
            &[(NextStep, 0.48), (Stop, 0.2), (Question, 0.22), (ChitChat, 0.1)],
            1e-12,
        );
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exploration_low_moves_mass_back_to_top() {
        use Intent::*;
        let r = row(&[(NextStep, 0.6), (Stop, 0.2), (Question, 0.1), (Definition, 0.1)]);
        let out = apply_exploration(&r, ExplorationDirection::TowardTopK, 0.2, 1);
        // 20% of the 0.2 explorative mass moves to NextStep.
        assert_row_close(
            &out,
            &[(NextStep, 0.64), (Stop, 0.2), (Question, 0.08), (Definition, 0.08)],
            1e-12,
        );
    }

    #[test]
    fn exploration_zero_factor_and_empty_receivers() {
        use Intent::*;
        let r = row(&[(NextStep, 0.6), (Stop, 0.2), (Question, 0.1), (ChitChat, 0.1)]);
        assert_eq!(
            apply_exploration(&r, ExplorationDirection::TowardExplorative, 0.0, 1),
            r
        );
        let no_receivers = row(&[(NextStep, 0.7), (Stop, 0.3)]);
        assert_eq!(
            apply_exploration(&no_receivers, ExplorationDirection::TowardExplorative, 0.2, 1),
            no_receivers
        );
    }

    #[test]
    fn graph_asset_rejects_bad_rows() {
        let bad = r#"{"rows": {"Begin": {"Start": 0.5}}}"#;
        assert!(matches!(
            TransitionGraph::from_json_str(bad),
            Err(CorpusError::InvalidRow { .. })
        ));
        let unknown = r#"{"rows": {"Nowhere": {"Start": 1.0}}}"#;
        assert!(matches!(
            TransitionGraph::from_json_str(unknown),
            Err(CorpusError::UnknownName(_))
        ));
        let missing = r#"{"rows": {"Begin": {"Start": 1.0}}}"#;
        assert!(matches!(
            TransitionGraph::from_json_str(missing),
            Err(CorpusError::MissingRow(_))
        ));
    }

    #[test]
    fn graph_json_round_trip() {
        let g = TransitionGraph::from_json_str(crate::assets::GRAPH_JSON).unwrap();
        let again = TransitionGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, again);
    }

    fn arb_row() -> impl Strategy<Value = IntentRow> {
        prop::array::uniform14(0.0f64..1.0).prop_filter_map("non-zero row", |mut r| {
            let total: f64 = r.iter().sum();
            if total < 1e-3 {
                return None;
            }
            r.iter_mut().for_each(|p| *p /= total);
            Some(r)
        })
    }

    fn on_simplex(r: &IntentRow) -> bool {
        r.iter().all(|p| *p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }

    proptest! {
        #[test]
        fn exploration_conserves_mass(r in arb_row(), f in 0.0f64..=1.0, k in 1usize..4, high in any::<bool>()) {
            let dir = if high { ExplorationDirection::TowardExplorative } else { ExplorationDirection::TowardTopK };
            let out = apply_exploration(&r, dir, f, k);
            let drift = (out.iter().sum::<f64>() - r.iter().sum::<f64>()).abs();
            prop_assert!(drift < 1e-12);
            prop_assert!(on_simplex(&out));
        }

        #[test]
        fn tolerance_stays_on_simplex(r in arb_row(), f in 0.1f64..20.0, n in 0u32..6) {
            if let Ok(out) = apply_tolerance(&r, f, n) {
                prop_assert!(on_simplex(&out));
            }
        }
    }
}
