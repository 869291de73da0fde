use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use mtad_cli::pipeline::{self, EvaluateOptions, SimulateOptions};
use mtad_cli::{CliError, RunConfig};
use mtad_core::lm::ModelLabel;
use mtad_core::sim::Method;

/// Trait-conditioned user simulation: generate profile corpora, train trait
/// models, simulate users against a scripted assistant and evaluate them.
///
/// Settings come from an optional TOML file; flags override it.
#[derive(Debug, Parser)]
#[command(name = "mtad", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (overrides `jobs`; all cores by default).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Log more; repeat for debug output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct ProfileArgs {
    /// Profile specs such as `engagement=high,verbosity=low` or `regular`,
    /// separated by `;` or given repeatedly.
    #[arg(long, value_delimiter = ';', value_name = "SPEC")]
    profiles: Vec<String>,
    /// File with one profile spec per line (`#` starts a comment).
    #[arg(long, value_name = "FILE")]
    profiles_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate filtered train/valid/test corpora per profile.
    GenCorpus {
        #[command(flatten)]
        profiles: ProfileArgs,
        /// Corpus seed (overrides `seeds.corpus`).
        #[arg(long)]
        seed: Option<u64>,
        /// Transition graph JSON (overrides `paths.graph`).
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        /// Utterance pool JSON (overrides `paths.utterances`).
        #[arg(long, value_name = "FILE")]
        utterances: Option<PathBuf>,
        /// Task list JSON (overrides `paths.tasks`).
        #[arg(long, value_name = "FILE")]
        tasks: Option<PathBuf>,
        /// Train dialogues per profile (overrides `splits.train`).
        #[arg(long)]
        n_train: Option<usize>,
        /// Validation dialogues per profile (overrides `splits.valid`).
        #[arg(long)]
        n_valid: Option<usize>,
        /// Test dialogues per profile (overrides `splits.test`).
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train the regular, specialized and joint n-gram models.
    Train {
        /// Train one model only, e.g. `jts`, `regular` or `verbosity-high`.
        #[arg(long, value_name = "LABEL")]
        only: Option<ModelLabel>,
        /// Balancing seed (overrides `seeds.balance`).
        #[arg(long)]
        seed: Option<u64>,
        /// N-gram order (overrides `ngram.order`).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Simulate dialogues per profile with one decoding method.
    Simulate {
        /// sts, jts, sampling, mtad or mtad-la (overrides `simulation.method`).
        #[arg(long)]
        method: Option<Method>,
        #[command(flatten)]
        profiles: ProfileArgs,
        /// Mixture weights as `label:weight,...` (mtad only).
        #[arg(long, value_name = "PAIRS")]
        weights: Option<String>,
        /// Task list JSON to simulate on instead of the held-out tasks.
        #[arg(long, value_name = "FILE")]
        tasks: Option<PathBuf>,
        /// Dialogues per profile (overrides `simulation.n`).
        #[arg(long)]
        n: Option<usize>,
        /// Simulation seed (overrides `seeds.simulation`).
        #[arg(long)]
        seed: Option<u64>,
        /// Turn limit (overrides `simulation.max_turns`).
        #[arg(long)]
        max_turns: Option<usize>,
        /// Take the most probable token at every step.
        #[arg(long)]
        greedy: bool,
        /// Directory name under `runs/`.
        #[arg(long, value_name = "NAME")]
        run_name: Option<String>,
    },
    /// Compute trend, distance and quality tables over simulated runs.
    Evaluate {
        /// Run sets to evaluate, separated by `,` (all by default).
        #[arg(long, value_delimiter = ',', value_name = "NAME")]
        runs: Vec<String>,
        /// Run set to compare against instead of the corpus test splits.
        #[arg(long, value_name = "NAME")]
        reference: Option<String>,
    },
    /// Summarize the corpora and runs in the output directory.
    Stats,
}

fn apply_profiles(cfg: &mut RunConfig, args: ProfileArgs) -> Result<(), CliError> {
    let mut specs = args.profiles;
    if let Some(path) = args.profiles_file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        specs.extend(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        );
    }
    if !specs.is_empty() {
        cfg.profiles = specs;
    }
    Ok(())
}

type Action = Box<dyn FnOnce(&RunConfig) -> Result<(), CliError> + Send>;

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }

    let command = cli.command;
    let action: Action = match command {
        Command::GenCorpus {
            profiles,
            seed,
            graph,
            utterances,
            tasks,
            n_train,
            n_valid,
            n_test,
        } => {
            apply_profiles(&mut cfg, profiles)?;
            cfg.seeds.corpus = seed.unwrap_or(cfg.seeds.corpus);
            cfg.paths.graph = graph.or(cfg.paths.graph.take());
            cfg.paths.utterances = utterances.or(cfg.paths.utterances.take());
            cfg.paths.tasks = tasks.or(cfg.paths.tasks.take());
            cfg.splits.train = n_train.unwrap_or(cfg.splits.train);
            cfg.splits.valid = n_valid.unwrap_or(cfg.splits.valid);
            cfg.splits.test = n_test.unwrap_or(cfg.splits.test);
            Box::new(|cfg| {
                for s in pipeline::gen_corpus(cfg)? {
                    let counts: Vec<String> = s.splits.iter().map(|x| format!("{}={}", x.split, x.dialogues)).collect();
                    println!("{:<24} {}", s.profile, counts.join(" "));
                }
                Ok(())
            })
        }
        Command::Train { only, seed, order } => {
            cfg.seeds.balance = seed.unwrap_or(cfg.seeds.balance);
            cfg.ngram.order = order.unwrap_or(cfg.ngram.order);
            Box::new(move |cfg| {
                for p in pipeline::train_models(cfg, only)? {
                    println!("{}", p.display());
                }
                Ok(())
            })
        }
        Command::Simulate {
            method,
            profiles,
            weights,
            tasks,
            n,
            seed,
            max_turns,
            greedy,
            run_name,
        } => {
            apply_profiles(&mut cfg, profiles)?;
            cfg.simulation.method = method.unwrap_or(cfg.simulation.method);
            cfg.simulation.n = n.unwrap_or(cfg.simulation.n);
            cfg.seeds.simulation = seed.unwrap_or(cfg.seeds.simulation);
            cfg.simulation.sim.max_turns = max_turns.unwrap_or(cfg.simulation.sim.max_turns);
            cfg.simulation.sim.decoder.greedy |= greedy;
            let opts = SimulateOptions {
                weights: weights.as_deref().map(pipeline::parse_weights).transpose()?,
                tasks,
                run_name,
            };
            Box::new(move |cfg| {
                for d in pipeline::simulate(cfg, &opts)? {
                    println!("{}", d.display());
                }
                Ok(())
            })
        }
        Command::Evaluate { runs, reference } => {
            let opts = EvaluateOptions { runs, reference };
            Box::new(move |cfg| {
                print!("{}", pipeline::evaluate(cfg, &opts)?.to_text());
                Ok(())
            })
        }
        Command::Stats => Box::new(|cfg| {
            print!("{}", pipeline::stats(cfg)?);
            Ok(())
        }),
    };

    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.jobs {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| action(&cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match std::panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("mtad: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("mtad: internal error: unexpected panic");
            ExitCode::from(3)
        }
    }
}
