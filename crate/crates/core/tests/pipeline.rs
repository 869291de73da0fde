//! Generation, training, decoding and simulation wired together on small
//! corpora.

use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

use mtad_core::assets::{Assets, TaskSplits};
use mtad_core::corpus::{
    balance_training_set, corpus_stats, filter_corpus, generate_corpus, CorpusRequest, CorpusStats,
    GenerationConfig,
};
use mtad_core::decode::{detect_degeneration, DecoderConfig};
use mtad_core::lm::{io, train, ModelLabel, NGramConfig, NGramModel, Vocabulary};
use mtad_core::seed;
use mtad_core::sim::{decoder_for, run_batch, BatchRequest, Method, ModelSet, SimConfig, TurnDecoder};
use mtad_core::types::intent_flags;
use mtad_core::{Dialogue, Intensity, Intent, Trait, UserProfile};
use proptest::prelude::*;

const N_TRAIN: usize = 150;

struct World {
    stats: CorpusStats,
    models: ModelSet,
    sim_tasks: Vec<mtad_core::Task>,
}

fn corpus(profile: UserProfile, n: usize, stats: Option<&CorpusStats>) -> Vec<Dialogue> {
    let a = Assets::bundled();
    let cfg = GenerationConfig::default();
    let tasks = TaskSplits::partition(&a.tasks).train;
    let mut req = CorpusRequest::new(profile, &tasks, &a.graph, &a.pool, &cfg, seed::label_hash(&profile.label()), n);
    req.filter = stats;
    generate_corpus(&req).unwrap().dialogues
}

/// Regular model plus the models of engagement, verbosity and repetition.
fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let regular = corpus(UserProfile::regular(), N_TRAIN, None);
        let stats = corpus_stats(&regular).unwrap();
        let mut labels = vec![ModelLabel::Regular];
        for t in [Trait::Engagement, Trait::Verbosity, Trait::Repetition] {
            for i in [Intensity::Low, Intensity::High] {
                labels.push(ModelLabel::Specialized(t, i));
            }
        }
        let corpora: Vec<(ModelLabel, Vec<Dialogue>)> = labels
            .iter()
            .map(|l| {
                let p = l.profile().unwrap();
                let d = if p.is_regular() { regular.clone() } else { corpus(p, N_TRAIN, Some(&stats)) };
                (*l, d)
            })
            .collect();
        let vocab = Arc::new(Vocabulary::from_dialogues(corpora.iter().flat_map(|(_, d)| d)));
        let mut models = ModelSet::new();
        for (l, d) in &corpora {
            let set = balance_training_set(d.clone(), 5);
            models.insert(train(*l, &set, vocab.clone(), &NGramConfig::default()).unwrap());
        }
        World {
            stats,
            models,
            sim_tasks: TaskSplits::partition(&Assets::bundled().tasks).simulation,
        }
    })
}

fn model(label: ModelLabel) -> Arc<NGramModel> {
    world().models.get(label).unwrap()
}

#[test]
fn high_and_low_filters_are_disjoint() {
    let w = world();
    let mut mixed = Vec::new();
    for t in Trait::ALL {
        for i in [Intensity::Low, Intensity::High] {
            mixed.extend(corpus(UserProfile::single(t, i), 20, None));
        }
    }
    for t in Trait::ALL {
        assert!(w.stats.get(t).std > 0.0);
        let seeds = |i| -> HashSet<(u64, String)> {
            filter_corpus(&mixed, &w.stats, t, i)
                .into_iter()
                .map(|d| (d.seed, d.profile.label()))
                .collect()
        };
        let (low, high) = (seeds(Intensity::Low), seeds(Intensity::High));
        assert!(!low.is_empty() && !high.is_empty(), "{t}");
        assert!(low.is_disjoint(&high), "{t}");
    }
}

#[test]
fn verbosity_high_model_talks_longer() {
    let cfg = DecoderConfig::default();
    let mean_len = |i: Intensity| {
        let d = decoder_for(Method::Sts, &UserProfile::single(Trait::Verbosity, i), &world().models, None, &cfg).unwrap();
        let words: usize = (0..500u64)
            .map(|k| {
                let out = d.decode(&[], &UserProfile::regular(), &mut seed::rng(k)).unwrap();
                out.utterance.split_whitespace().count()
            })
            .sum();
        words as f64 / 500.0
    };
    let (low, high) = (mean_len(Intensity::Low), mean_len(Intensity::High));
    assert!(low < high, "{low} vs {high}");
}

#[test]
fn simulated_dialogues_respect_the_turn_limit_and_end_on_stop() {
    let w = world();
    let profiles = [
        UserProfile::regular(),
        UserProfile::parse("engagement=high,verbosity=low").unwrap(),
        UserProfile::parse("engagement=low,repetition=high,verbosity=high").unwrap(),
    ];
    let config = SimConfig {
        max_turns: 12,
        ..Default::default()
    };
    for method in [Method::Mtad, Method::MtadLa, Method::Sampling] {
        let req = BatchRequest {
            method,
            models: &w.models,
            weights: None,
            n_per_profile: 15,
            tasks: &w.sim_tasks,
            config: &config,
            seed: 21,
        };
        let runs = run_batch(&req, &profiles).unwrap();
        assert_eq!(runs, run_batch(&req, &profiles).unwrap(), "{method} batch is not pure");
        for run in &runs {
            assert_eq!(run.dialogues.len(), 15);
            assert!(run.failures.is_empty());
            for d in &run.dialogues {
                assert!(!d.turns.is_empty() && d.turns.len() <= config.max_turns);
                let stop = d.turns.iter().position(|t| t.intent == Intent::Stop);
                if let Some(k) = stop {
                    assert_eq!(k, d.turns.len() - 1);
                }
            }
        }
    }
}

#[test]
fn generation_outputs_are_self_consistent() {
    let w = world();
    let cfg = DecoderConfig {
        temperature: 3.0,
        ..Default::default()
    };
    let p = UserProfile::parse("engagement=low,verbosity=high").unwrap();
    for method in [Method::Mtad, Method::MtadLa, Method::Sampling] {
        let d = decoder_for(method, &p, &w.models, None, &cfg).unwrap();
        for k in 0..300u64 {
            let out = d.decode(&[], &p, &mut seed::rng(k)).unwrap();
            assert_eq!(out.degenerate, detect_degeneration(&out.tokens));
            assert!(out.tokens.len() <= cfg.max_response_tokens);
        }
    }
}

#[test]
fn reloaded_models_simulate_identically() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let mut reloaded = ModelSet::new();
    let mut vocab = None;
    for label in w.models.labels() {
        let path = dir.path().join(format!("{label}.ngram"));
        io::save_model(&w.models.get(label).unwrap(), &path).unwrap();
        let m = match &vocab {
            Some(v) => io::load_model_sharing(&path, v).unwrap(),
            None => io::load_model(&path).unwrap(),
        };
        vocab.get_or_insert_with(|| m.vocab().clone());
        reloaded.insert(m);
    }
    let p = [UserProfile::parse("engagement=high,repetition=low").unwrap()];
    let config = SimConfig::default();
    let batch = |models: &ModelSet| {
        run_batch(
            &BatchRequest {
                method: Method::Mtad,
                models,
                weights: None,
                n_per_profile: 10,
                tasks: &w.sim_tasks,
                config: &config,
                seed: 4,
            },
            &p,
        )
        .unwrap()
    };
    assert_eq!(batch(&w.models), batch(&reloaded));
}

#[test]
fn intent_flags_are_total_and_constant() {
    for i in Intent::ALL {
        assert_eq!(intent_flags(i), intent_flags(i));
        assert_eq!(intent_flags(i), i.flags());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn next_token_distributions_are_on_the_simplex(ids in prop::collection::vec(0u32..400, 0..12)) {
        let m = model(ModelLabel::Specialized(Trait::Repetition, Intensity::High));
        let v = m.vocab().len() as u32;
        let ctx: Vec<u32> = ids.into_iter().map(|i| i % v).collect();
        let d = m.next_token_distribution(&ctx);
        prop_assert_eq!(d.len(), m.vocab().len());
        prop_assert!(d.as_slice().iter().all(|p| *p > 0.0));
        prop_assert!((d.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
