//! The generate → train → simulate → evaluate pipeline over an output
//! directory.
//!
//! Layout under `paths.out`:
//!
//! ```text
//! corpus/regular_stats.json
//! corpus/<profile>/{train,valid,test}.jsonl
//! corpus/<profile>/stats.json
//! models/<label>.ngram
//! runs/<run set>/<profile>/{run.meta,dialogues.jsonl}
//! eval/report.json, eval/report.txt, eval/histograms/<run set>.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mtad_core::assets::{load_graph, load_pool, load_tasks, Assets, TaskSplits};
use mtad_core::corpus::{
    balance_training_set, corpus_stats, generate_corpus, CorpusRequest, CorpusStats,
};
use mtad_core::eval::{
    degeneration_rate, distance_report, histogram, mean_metric, trend_report, uniqueness_rate,
    DistanceEntry, EvalReport, Histogram, MetricKind, MetricOptions, MetricSample, ProfileEntry,
    QualityEntry,
};
use mtad_core::lm::{load_model, load_model_sharing, save_model, train, ModelLabel, NGramModel, Vocabulary};
use mtad_core::scorers::Scorers;
use mtad_core::seed;
use mtad_core::sim::{read_run, run_batch, write_run, BatchRequest, Method, ModelSet, SimulationRun};
use mtad_core::types::{read_jsonl, write_jsonl, Dialogue, Intensity, Task, Trait, UserProfile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Paths inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self, profile: &UserProfile) -> PathBuf {
        self.root.join("corpus").join(profile.label())
    }

    pub fn corpus_file(&self, profile: &UserProfile, split: &str) -> PathBuf {
        self.corpus_dir(profile).join(format!("{split}.jsonl"))
    }

    pub fn regular_stats(&self) -> PathBuf {
        self.root.join("corpus").join("regular_stats.json")
    }

    pub fn model_file(&self, label: ModelLabel) -> PathBuf {
        self.root.join("models").join(format!("{label}.ngram"))
    }

    pub fn runs_root(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, run_set: &str, profile: &UserProfile) -> PathBuf {
        self.runs_root().join(run_set).join(profile.label())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Graph, pool and generation tasks named by the config, parsed up front.
pub fn load_assets(cfg: &RunConfig) -> Result<Assets, CliError> {
    let bundled = Assets::bundled();
    let p = &cfg.paths;
    Ok(Assets {
        graph: match &p.graph {
            Some(path) => load_graph(path).map_err(|e| CliError::data(path.display(), e))?,
            None => bundled.graph.clone(),
        },
        pool: match &p.utterances {
            Some(path) => load_pool(path, Scorers::bundled()).map_err(|e| CliError::data(path.display(), e))?,
            None => bundled.pool.clone(),
        },
        tasks: match &p.tasks {
            Some(path) => load_tasks(path).map_err(|e| CliError::data(path.display(), e))?,
            None => bundled.tasks.clone(),
        },
        diy_tasks: bundled.diy_tasks.clone(),
    })
}

/// Profiles named by `specs`, or Regular plus the sixteen single-trait
/// profiles when empty. Duplicates are dropped, first occurrence wins.
pub fn resolve_profiles(specs: &[String]) -> Result<Vec<UserProfile>, CliError> {
    if specs.is_empty() {
        return Ok(UserProfile::single_trait_profiles());
    }
    let mut out: Vec<UserProfile> = Vec::new();
    for s in specs {
        let p = UserProfile::parse(s)?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Parses `label:weight` pairs separated by commas.
pub fn parse_weights(text: &str) -> Result<Vec<(ModelLabel, f64)>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (label, w) = pair
                .rsplit_once(':')
                .ok_or_else(|| CliError::Usage(format!("expected model:weight, got `{pair}`")))?;
            let label: ModelLabel = label.trim().parse()?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("weight `{w}` is not a number")))?;
            Ok((label, w))
        })
        .collect()
}

fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<(), CliError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(&mut f, dialogues)?;
    f.flush()?;
    Ok(())
}

pub fn read_dialogues(path: &Path) -> Result<Vec<Dialogue>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    read_jsonl(BufReader::new(f)).map_err(|e| CliError::data(path.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Seed base of one corpus split.
pub fn split_seed(corpus_seed: u64, profile: &UserProfile, split: usize) -> u64 {
    seed::derive(seed::derive(corpus_seed, seed::label_hash(&profile.label())), split as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub dialogues: usize,
    pub attempts: usize,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub profile: String,
    pub corpus_seed: u64,
    pub splits: Vec<SplitSummary>,
    /// Mean identifying metrics of the train split.
    pub means: BTreeMap<Trait, f64>,
}

/// Generates the requested profile corpora. The Regular train split is
/// always generated first since its statistics drive the filter; it is
/// written only when Regular is requested.
pub fn gen_corpus(cfg: &RunConfig) -> Result<Vec<CorpusSummary>, CliError> {
    let assets = load_assets(cfg)?;
    let profiles = resolve_profiles(&cfg.profiles)?;
    let layout = Layout::new(&cfg.paths.out);
    let splits = TaskSplits::partition(&assets.tasks);
    let split_tasks: [&[Task]; 3] = [&splits.train, &splits.valid, &splits.test];
    let sizes = [cfg.splits.train, cfg.splits.valid, cfg.splits.test];
    if split_tasks.iter().any(|t| t.is_empty()) {
        return Err(CliError::Data(format!(
            "{} tasks are too few for task-disjoint splits",
            assets.tasks.len()
        )));
    }

    let generate = |profile: UserProfile, split: usize, filter: Option<&CorpusStats>| {
        let mut req = CorpusRequest::new(
            profile,
            split_tasks[split],
            &assets.graph,
            &assets.pool,
            &cfg.generation,
            split_seed(cfg.seeds.corpus, &profile, split),
            sizes[split],
        );
        req.filter = filter;
        generate_corpus(&req)
    };

    let regular_train = generate(UserProfile::regular(), 0, None)?;
    let stats = corpus_stats(&regular_train.dialogues)?;
    std::fs::create_dir_all(layout.root.join("corpus"))?;
    write_json(&layout.regular_stats(), &stats)?;

    let mut summaries = Vec::new();
    for profile in profiles {
        let dir = layout.corpus_dir(&profile);
        std::fs::create_dir_all(&dir)?;
        let filter = if profile.is_regular() { None } else { Some(&stats) };
        let mut split_summaries = Vec::new();
        let mut train_split = Vec::new();
        for (k, name) in SPLITS.iter().enumerate() {
            let corpus = if k == 0 && profile.is_regular() {
                regular_train.clone()
            } else {
                generate(profile, k, filter)?
            };
            if corpus.dialogues.len() < sizes[k] {
                log::warn!(
                    "{} {name}: only {} of {} dialogues passed the filter",
                    profile.label(),
                    corpus.dialogues.len(),
                    sizes[k]
                );
            }
            write_dialogues(&layout.corpus_file(&profile, name), &corpus.dialogues)?;
            split_summaries.push(SplitSummary {
                split: name.to_string(),
                dialogues: corpus.dialogues.len(),
                attempts: corpus.attempts,
                tasks: split_tasks[k].len(),
            });
            if k == 0 {
                train_split = corpus.dialogues;
            }
        }
        let means = Trait::ALL
            .iter()
            .filter_map(|t| mean_metric(&train_split, *t, MetricOptions::default()).map(|m| (*t, m)))
            .collect();
        let summary = CorpusSummary {
            profile: profile.label(),
            corpus_seed: cfg.seeds.corpus,
            splits: split_summaries,
            means,
        };
        write_json(&dir.join("stats.json"), &summary)?;
        log::info!("wrote corpus {}", profile.label());
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Regular, the sixteen specialized models and the joint model.
pub fn all_model_labels() -> Vec<ModelLabel> {
    let mut out = vec![ModelLabel::Regular];
    out.extend(ModelLabel::single_trait_labels().into_iter().filter(|l| *l != ModelLabel::Regular));
    out.push(ModelLabel::Joint);
    out
}

fn label_profile(label: ModelLabel) -> UserProfile {
    label.profile().expect("specialized and regular labels have a profile")
}

/// Trains models from the train splits. The vocabulary is built from
/// every single-trait and Regular corpus so that all models share it.
pub fn train_models(cfg: &RunConfig, only: Option<ModelLabel>) -> Result<Vec<PathBuf>, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let labels = match only {
        Some(l) => vec![l],
        None => all_model_labels(),
    };
    let corpus_labels: Vec<ModelLabel> = all_model_labels()
        .into_iter()
        .filter(|l| *l != ModelLabel::Joint)
        .collect();
    let needed: Vec<ModelLabel> = if labels.contains(&ModelLabel::Joint) {
        corpus_labels.clone()
    } else {
        labels.clone()
    };
    let mut corpora: BTreeMap<ModelLabel, Vec<Dialogue>> = BTreeMap::new();
    for l in &corpus_labels {
        let path = layout.corpus_file(&label_profile(*l), "train");
        if path.exists() {
            corpora.insert(*l, read_dialogues(&path)?);
        } else if needed.contains(l) {
            return Err(CliError::Data(format!(
                "missing training corpus for profile `{}` ({})",
                label_profile(*l).label(),
                path.display()
            )));
        }
    }
    let vocab = Arc::new(Vocabulary::from_dialogues(corpora.values().flatten()));
    log::info!("vocabulary of {} tokens", vocab.len());

    let trained: Vec<Result<NGramModel, CliError>> = labels
        .par_iter()
        .map(|label| {
            let dialogues: Vec<Dialogue> = match label {
                ModelLabel::Joint => corpus_labels.iter().flat_map(|l| corpora[l].clone()).collect(),
                l => corpora[l].clone(),
            };
            let set_seed = seed::derive(cfg.seeds.balance, seed::label_hash(&label.to_string()));
            let set = balance_training_set(dialogues, set_seed);
            Ok(train(*label, &set, vocab.clone(), &cfg.ngram)?)
        })
        .collect();

    std::fs::create_dir_all(layout.root.join("models"))?;
    let mut written = Vec::new();
    for model in trained {
        let model = model?;
        let path = layout.model_file(model.label());
        save_model(&model, &path)?;
        log::info!("wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// Models a method needs for `profile`.
pub fn required_labels(method: Method, profile: &UserProfile) -> Vec<ModelLabel> {
    let mut out: Vec<ModelLabel> = match method {
        Method::Jts => vec![ModelLabel::Joint],
        Method::Sts => ModelLabel::for_profile(profile).into_iter().collect(),
        _ => profile
            .active()
            .map(|(t, i)| ModelLabel::Specialized(t, i))
            .collect(),
    };
    if method == Method::MtadLa || out.is_empty() {
        out.push(ModelLabel::Regular);
    }
    out
}

/// Loads `labels` from the models directory with one shared vocabulary.
pub fn load_models(layout: &Layout, labels: &[ModelLabel]) -> Result<ModelSet, CliError> {
    let mut set = ModelSet::new();
    let mut vocab: Option<Arc<Vocabulary>> = None;
    for l in labels {
        if set.labels().any(|x| x == *l) {
            continue;
        }
        let path = layout.model_file(*l);
        if !path.exists() {
            return Err(CliError::Data(format!("missing model `{l}` ({})", path.display())));
        }
        let model = match &vocab {
            Some(v) => load_model_sharing(&path, v),
            None => load_model(&path),
        }
        .map_err(|e| CliError::data(path.display(), e))?;
        if model.label() != *l {
            return Err(CliError::Data(format!(
                "{} holds model `{}`, expected `{l}`",
                path.display(),
                model.label()
            )));
        }
        vocab.get_or_insert_with(|| model.vocab().clone());
        set.insert(model);
    }
    Ok(set)
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub weights: Option<Vec<(ModelLabel, f64)>>,
    /// Task file replacing the held-out in-domain tasks.
    pub tasks: Option<PathBuf>,
    /// Directory name under `runs/`; defaults to the method name, suffixed
    /// with the task file stem when one is given.
    pub run_name: Option<String>,
}

pub const IN_DOMAIN: &str = "in-domain";

/// Simulates every requested profile and writes one run directory each.
pub fn simulate(cfg: &RunConfig, opts: &SimulateOptions) -> Result<Vec<PathBuf>, CliError> {
    let method = cfg.simulation.method;
    if opts.weights.is_some() && method != Method::Mtad {
        return Err(CliError::Usage("--weights applies to the mtad method only".into()));
    }
    let layout = Layout::new(&cfg.paths.out);
    let profiles = resolve_profiles(&cfg.profiles)?;
    let (tasks, task_source) = match &opts.tasks {
        Some(path) => (
            load_tasks(path).map_err(|e| CliError::data(path.display(), e))?,
            format!("file:{}", path.display()),
        ),
        None => (TaskSplits::partition(&load_assets(cfg)?.tasks).simulation, IN_DOMAIN.to_string()),
    };
    let run_name = opts.run_name.clone().unwrap_or_else(|| match &opts.tasks {
        Some(path) => format!(
            "{method}-{}",
            path.file_stem().map_or("tasks".into(), |s| s.to_string_lossy())
        ),
        None => method.to_string(),
    });

    let mut labels: Vec<ModelLabel> = profiles.iter().flat_map(|p| required_labels(method, p)).collect();
    if let Some(w) = &opts.weights {
        labels.extend(w.iter().map(|(l, _)| *l));
    }
    let models = load_models(&layout, &labels)?;

    let req = BatchRequest {
        method,
        models: &models,
        weights: opts.weights.as_deref(),
        n_per_profile: cfg.simulation.n,
        tasks: &tasks,
        config: &cfg.simulation.sim,
        seed: cfg.seeds.simulation,
    };
    let runs = run_batch(&req, &profiles)?;
    let mut written = Vec::new();
    for mut run in runs {
        run.task_source = task_source.clone();
        if !run.failures.is_empty() {
            log::error!("{}: {} dialogues failed", run.profile.label(), run.failures.len());
        }
        let dir = layout.run_dir(&run_name, &run.profile);
        write_run(&run, &dir)?;
        written.push(dir);
    }
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    /// Run sets to evaluate; all under `runs/` when empty.
    pub runs: Vec<String>,
    /// Compare against this run set instead of the corpus test splits.
    pub reference: Option<String>,
}

fn subdirs(dir: &Path) -> Result<Vec<String>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    out.sort();
    Ok(out)
}

/// Every run of one run set, ordered by profile label.
pub fn read_run_set(layout: &Layout, name: &str) -> Result<Vec<SimulationRun>, CliError> {
    let dir = layout.runs_root().join(name);
    if !dir.is_dir() {
        return Err(CliError::Data(format!("no run set `{name}` under {}", layout.runs_root().display())));
    }
    subdirs(&dir)?
        .iter()
        .map(|p| read_run(&dir.join(p)).map_err(|e| CliError::data(dir.join(p).display(), e)))
        .collect()
}

fn reference_for(
    layout: &Layout,
    opts: &EvaluateOptions,
    reference_runs: &[SimulationRun],
    run: &SimulationRun,
) -> Result<Option<Vec<Dialogue>>, CliError> {
    let found = if opts.reference.is_some() {
        reference_runs
            .iter()
            .find(|r| r.profile == run.profile)
            .map(|r| r.dialogues.clone())
    } else if run.task_source != IN_DOMAIN {
        None
    } else {
        let path = layout.corpus_file(&run.profile, "test");
        if path.exists() {
            Some(read_dialogues(&path)?)
        } else {
            None
        }
    };
    if let Some(d) = &found {
        if let Some(bad) = d.iter().find(|d| d.profile != run.profile) {
            return Err(CliError::Data(format!(
                "reference for `{}` contains a `{}` dialogue",
                run.profile.label(),
                bad.profile.label()
            )));
        }
        if d.is_empty() {
            return Err(CliError::Data(format!("reference for `{}` is empty", run.profile.label())));
        }
    }
    Ok(found)
}

/// Builds the evaluation report and writes it with per-trait histograms.
pub fn evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<EvalReport, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let options = MetricOptions::default();
    let names = if opts.runs.is_empty() {
        subdirs(&layout.runs_root())?
    } else {
        opts.runs.clone()
    };
    if names.is_empty() {
        return Err(CliError::Data(format!("no runs under {}", layout.runs_root().display())));
    }
    let reference_runs = match &opts.reference {
        Some(r) => read_run_set(&layout, r)?,
        None => Vec::new(),
    };

    let mut training: Vec<Dialogue> = Vec::new();
    for p in UserProfile::single_trait_profiles() {
        let path = layout.corpus_file(&p, "train");
        if path.exists() {
            training.extend(read_dialogues(&path)?);
        }
    }

    let mut report = EvalReport::default();
    std::fs::create_dir_all(layout.eval_dir().join("histograms"))?;
    for name in &names {
        let runs = read_run_set(&layout, name)?;
        let by_profile: BTreeMap<UserProfile, &SimulationRun> = runs.iter().map(|r| (r.profile, r)).collect();

        for t in Trait::ALL {
            let group = |i: Intensity| {
                let p = if i == Intensity::Neutral { UserProfile::regular() } else { UserProfile::single(t, i) };
                by_profile.get(&p).map(|r| (i, r.dialogues.as_slice()))
            };
            if group(Intensity::Low).is_none() && group(Intensity::High).is_none() {
                continue;
            }
            let groups: Vec<(Intensity, &[Dialogue])> =
                [Intensity::Low, Intensity::Neutral, Intensity::High].into_iter().filter_map(group).collect();
            report.trends.push(trend_report(name, &groups, t, options));
        }

        let mut missing_reference = Vec::new();
        for run in &runs {
            let reference = reference_for(&layout, opts, &reference_runs, run)?;
            if reference.is_none() {
                missing_reference.push(run.profile.label());
            }
            let traits: Vec<(Trait, Intensity)> = if run.profile.is_regular() {
                Trait::ALL.iter().map(|t| (*t, Intensity::Neutral)).collect()
            } else {
                run.profile.active().collect()
            };
            for (t, i) in traits {
                let distance = match &reference {
                    Some(r) => Some(distance_report(&run.dialogues, r, t, options)?),
                    None => None,
                };
                report.distances.push(DistanceEntry {
                    method: name.clone(),
                    trait_: t,
                    intensity: i,
                    kind: MetricKind::of(t),
                    distance,
                });
            }
            if run.profile.active().count() > 1 {
                report.profiles.push(ProfileEntry {
                    method: name.clone(),
                    profile: run.profile.label(),
                    means: run
                        .profile
                        .active()
                        .filter_map(|(t, _)| mean_metric(&run.dialogues, t, options).map(|m| (t, m)))
                        .collect(),
                });
            }
            for f in &run.failures {
                report.notes.push(format!(
                    "{name}/{}: dialogue {} failed: {}",
                    run.profile.label(),
                    f.index,
                    f.message
                ));
            }
        }
        if !missing_reference.is_empty() {
            report.notes.push(format!(
                "{name}: no reference for {}; distances omitted",
                missing_reference.join(", ")
            ));
        }

        let all: Vec<Dialogue> = runs.iter().flat_map(|r| r.dialogues.iter().cloned()).collect();
        report.quality.push(QualityEntry {
            method: name.clone(),
            degeneration_rate: degeneration_rate(&all),
            uniqueness_rate: (!training.is_empty()).then(|| uniqueness_rate(&all, &training)),
            dialogues: all.len(),
        });

        let hist: BTreeMap<String, BTreeMap<Trait, Histogram>> = runs
            .iter()
            .map(|r| {
                let per_trait = Trait::ALL
                    .iter()
                    .map(|t| (*t, histogram(&MetricSample::collect(&r.dialogues, *t, options).values, 20)))
                    .collect();
                (r.profile.label(), per_trait)
            })
            .collect();
        write_json(&layout.eval_dir().join("histograms").join(format!("{name}.json")), &hist)?;
    }

    std::fs::write(layout.eval_dir().join("report.json"), report.to_json() + "\n")?;
    std::fs::write(layout.eval_dir().join("report.txt"), report.to_text())?;
    Ok(report)
}

/// Plain-text summary of the corpora and runs in the output directory.
pub fn stats(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let options = MetricOptions::default();
    let mut out = String::new();
    let header = |out: &mut String, first: &str| {
        let _ = write!(out, "{first:<40} {:>6}", "n");
        for t in Trait::ALL {
            let _ = write!(out, " {:>8}", &t.name()[..t.name().len().min(8)]);
        }
        out.push('\n');
    };
    let row = |out: &mut String, name: &str, d: &[Dialogue]| {
        let _ = write!(out, "{name:<40} {:>6}", d.len());
        for t in Trait::ALL {
            let v = mean_metric(d, t, options).map_or("n/a".to_string(), |m| format!("{m:.3}"));
            let _ = write!(out, " {v:>8}");
        }
        out.push('\n');
    };

    let corpora = subdirs(&layout.root.join("corpus"))?;
    if !corpora.is_empty() {
        out.push_str("Corpora (mean identifying metric)\n");
        header(&mut out, "corpus/split");
        for c in &corpora {
            for s in SPLITS {
                let path = layout.root.join("corpus").join(c).join(format!("{s}.jsonl"));
                if path.exists() {
                    row(&mut out, &format!("{c}/{s}"), &read_dialogues(&path)?);
                }
            }
        }
        out.push('\n');
    }
    let sets = subdirs(&layout.runs_root())?;
    if !sets.is_empty() {
        out.push_str("Runs (mean identifying metric)\n");
        header(&mut out, "run set/profile");
        for s in &sets {
            for run in read_run_set(&layout, s)? {
                row(&mut out, &format!("{s}/{}", run.profile.label()), &run.dialogues);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("nothing to summarize under {}", layout.root.display())));
    }
    Ok(out)
}
