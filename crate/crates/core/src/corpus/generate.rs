//! Profile-aware dialogue generation.

use rand::Rng;
use rayon::prelude::*;

use super::config::GenerationConfig;
use super::filter::{passes_filter, CorpusStats};
use super::graph::{apply_dialogue_level_traits, apply_tolerance, State, TransitionGraph};
use super::pool::{apply_utterance_level_traits, UtterancePool};
use super::system::system_respond;
use super::CorpusError;
use crate::seed;
use crate::types::{sample_index, Dialogue, Intent, Task, Trait, Turn, UserProfile};

/// Generates one dialogue for `task` and `profile`. The result is a pure
/// function of the inputs and `seed`.
///
/// Dialogue-level traits edit the graph once up front. Each turn then draws
/// an intent from the current state's row (with the tolerance penalty for
/// errors so far), picks an utterance under the utterance-level traits, and
/// asks the scripted system for a reply. The loop ends after a `Stop` turn
/// or at `config.max_turns`.
pub fn generate_dialogue(
    task: &Task,
    profile: &UserProfile,
    graph: &TransitionGraph,
    pool: &UtterancePool,
    config: &GenerationConfig,
    seed: u64,
) -> Result<Dialogue, CorpusError> {
    let edited = apply_dialogue_level_traits(profile, graph, config)?;
    let tolerance = config.dialogue_factor(Trait::Tolerance, profile.get(Trait::Tolerance));
    let mut rng = seed::rng(seed);

    let mut turns: Vec<Turn> = Vec::new();
    let mut state = State::Begin;
    let mut cursor = 0usize;
    let mut n_errors = 0u32;

    while turns.len() < config.max_turns {
        let row = match tolerance {
            Some(f) if n_errors > 0 => apply_tolerance(edited.row(state), f, n_errors)?,
            _ => *edited.row(state),
        };
        let intent = Intent::ALL[sample_index(&row, rng.gen())];

        let candidates =
            apply_utterance_level_traits(profile, pool, intent, &turns, config, &mut rng)?;
        let weights: Vec<f64> = candidates.iter().map(|c| c.weight).collect();
        let utterance = candidates[sample_index(&weights, rng.gen())].text.to_string();

        let reply = system_respond(
            intent,
            &utterance,
            task,
            cursor,
            config.system_error_rate,
            &mut rng,
        );
        cursor = reply.cursor;
        if reply.error {
            n_errors += 1;
        }
        turns.push(Turn {
            intent,
            user_utterance: utterance,
            system_response: reply.text,
            system_error: reply.error,
            degenerate: false,
        });
        state = State::After(intent);
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

/// Everything needed to produce a corpus for one profile.
#[derive(Debug, Clone, Copy)]
pub struct CorpusRequest<'a> {
    pub profile: UserProfile,
    pub tasks: &'a [Task],
    pub graph: &'a TransitionGraph,
    pub pool: &'a UtterancePool,
    pub config: &'a GenerationConfig,
    /// Dialogue `k` uses seed `derive(seed_base, k)`.
    pub seed_base: u64,
    /// Number of dialogues to keep.
    pub target: usize,
    /// Statistics of the Regular corpus; when set, dialogues must pass the
    /// half-standard-deviation filter for the profile's traits.
    pub filter: Option<&'a CorpusStats>,
    /// Upper bound on generated dialogues, as a multiple of `target`.
    pub max_attempts_factor: usize,
}

impl<'a> CorpusRequest<'a> {
    pub fn new(
        profile: UserProfile,
        tasks: &'a [Task],
        graph: &'a TransitionGraph,
        pool: &'a UtterancePool,
        config: &'a GenerationConfig,
        seed_base: u64,
        target: usize,
    ) -> Self {
        Self {
            profile,
            tasks,
            graph,
            pool,
            config,
            seed_base,
            target,
            filter: None,
            max_attempts_factor: 200,
        }
    }

    pub fn filtered_by(mut self, stats: &'a CorpusStats) -> Self {
        self.filter = Some(stats);
        self
    }
}

/// Result of [`generate_corpus`]: kept dialogues in seed order and the
/// number of dialogues generated to obtain them.
#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub dialogues: Vec<Dialogue>,
    pub attempts: usize,
}

/// Task for dialogue seed `seed`, drawn uniformly.
pub fn task_for_seed(tasks: &[Task], seed: u64) -> &Task {
    let idx = (seed::derive(seed, 0x7a5c) % tasks.len() as u64) as usize;
    &tasks[idx]
}

/// Generates dialogues with consecutive derived seeds until `target` pass the
/// filter. Chunks run in parallel, but only the seed order decides which
/// dialogues are kept, so the output does not depend on the thread count.
pub fn generate_corpus(req: &CorpusRequest) -> Result<GeneratedCorpus, CorpusError> {
    if req.tasks.is_empty() {
        return Err(CorpusError::NoTasks);
    }
    let max_attempts = req.target.saturating_mul(req.max_attempts_factor).max(req.target);
    let chunk = req.target.clamp(64, 4096);
    let mut kept = Vec::with_capacity(req.target);
    let mut next = 0usize;

    while kept.len() < req.target && next < max_attempts {
        let end = (next + chunk).min(max_attempts);
        let batch: Result<Vec<Dialogue>, CorpusError> = (next..end)
            .into_par_iter()
            .map(|k| {
                let s = seed::derive(req.seed_base, k as u64);
                generate_dialogue(
                    task_for_seed(req.tasks, s),
                    &req.profile,
                    req.graph,
                    req.pool,
                    req.config,
                    s,
                )
            })
            .collect();
        for d in batch? {
            next += 1;
            let keep = match req.filter {
                Some(stats) => req
                    .profile
                    .active()
                    .all(|(t, i)| passes_filter(&d, stats, t, i)),
                None => true,
            };
            if keep {
                kept.push(d);
                if kept.len() == req.target {
                    break;
                }
            }
        }
    }

    if kept.len() < req.target {
        log::warn!(
            "profile {}: kept {} of {} dialogues after {} attempts",
            req.profile,
            kept.len(),
            req.target,
            next
        );
    }
    Ok(GeneratedCorpus {
        dialogues: kept,
        attempts: next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Assets;
    use crate::types::Intensity;

    #[test]
    fn single_turn_limit() {
        let a = Assets::bundled();
        let cfg = GenerationConfig {
            max_turns: 1,
            ..Default::default()
        };
        for s in 0..20 {
            let d = generate_dialogue(
                &a.tasks[0],
                &UserProfile::regular(),
                &a.graph,
                &a.pool,
                &cfg,
                s,
            )
            .unwrap();
            assert_eq!(d.turns.len(), 1);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = Assets::bundled();
        let cfg = GenerationConfig::default();
        let p = UserProfile::parse("repetition=high,tolerance=low").unwrap();
        let one = generate_dialogue(&a.tasks[3], &p, &a.graph, &a.pool, &cfg, 42).unwrap();
        let two = generate_dialogue(&a.tasks[3], &p, &a.graph, &a.pool, &cfg, 42).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.seed, 42);
    }

    #[test]
    fn dialogues_are_well_formed() {
        let a = Assets::bundled();
        let cfg = GenerationConfig::default();
        for p in UserProfile::single_trait_profiles() {
            for s in 0..30 {
                let d = generate_dialogue(&a.tasks[0], &p, &a.graph, &a.pool, &cfg, s).unwrap();
                assert!(!d.turns.is_empty() && d.turns.len() <= cfg.max_turns);
                let last = d.turns.last().unwrap();
                assert!(last.intent == Intent::Stop || d.turns.len() == cfg.max_turns);
                let stops = d.turns.iter().filter(|t| t.intent == Intent::Stop).count();
                assert!(stops <= 1);
                assert!(d.turns.iter().all(|t| !t.user_utterance.is_empty()));
                assert!(d.turns.iter().all(|t| !t.system_response.is_empty()));
            }
        }
    }

    #[test]
    fn engagement_orders_turn_counts() {
        let a = Assets::bundled();
        let cfg = GenerationConfig::default();
        let mean_turns = |i: Intensity| {
            let p = UserProfile::single(Trait::Engagement, i);
            let total: usize = (0..500u64)
                .map(|s| {
                    generate_dialogue(task_for_seed(&a.tasks, s), &p, &a.graph, &a.pool, &cfg, s)
                        .unwrap()
                        .turns
                        .len()
                })
                .sum();
            total as f64 / 500.0
        };
        let low = mean_turns(Intensity::Low);
        let high = mean_turns(Intensity::High);
        assert!(low < high, "{low} vs {high}");
    }

    #[test]
    fn corpus_generation_is_thread_count_independent() {
        let a = Assets::bundled();
        let cfg = GenerationConfig::default();
        let req = CorpusRequest::new(
            UserProfile::single(Trait::Exploration, Intensity::High),
            &a.tasks,
            &a.graph,
            &a.pool,
            &cfg,
            9,
            100,
        );
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| generate_corpus(&req).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| generate_corpus(&req).unwrap());
        assert_eq!(one.dialogues, many.dialogues);
        assert_eq!(one.dialogues.len(), 100);
    }
}
