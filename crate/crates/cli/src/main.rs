//! `mcnoma` command line: sweeps, self-checks, training and evaluation.
//!
//! Log verbosity comes from `MCNOMA_LOG` (`error`, `warn`, `info`, `debug`),
//! default `info`. Logs go to standard error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{debug, error, info};
use mcnoma::config::KvConfig;
use mcnoma::error::CoreError;
use mcnoma::experiment::{run_experiment, training_setup, ExperimentConfig};
use mcnoma::scenario::{generate, Scenario};
use mcnoma::trainer::{evaluate_policy, train_with_progress, Agents, TrainConfig};
use mcnoma::verify::{run_all, run_suite, Suite};

const LOG_ENV: &str = "MCNOMA_LOG";

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
    #[error("training stopped early: {0}")]
    Diverged(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mcnoma", version, about = "Multi-carrier NOMA resource allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a parameter sweep and write one CSV per metric.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base seed for scenario draws and training.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a self-check suite (core-math, gradients, oracle, training,
    /// complexity, or all).
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the check table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train agents on one generated scenario and save a checkpoint.
    Train {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario file for later evaluation; defaults to `<checkpoint>.scenario`.
        #[arg(long)]
        scenario_out: Option<PathBuf>,
        /// Per-epoch training log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint greedily on a saved scenario.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Training config supplying rollout settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Per-user rates and constraint flags as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_config(path: &Path) -> Result<KvConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(KvConfig::parse(&text)?)
}

fn run(config: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<()> {
    let mut kv = read_config(config)?;
    if let Some(seed) = seed {
        kv.set("rng_seed", seed);
        kv.set("train_seed", seed);
    }
    let cfg = ExperimentConfig::from_kv(&kv)?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    info!(
        "sweeping {} over {:?} with {} solver(s), {} instance(s), {threads} thread(s)",
        cfg.axis.key(),
        cfg.values,
        cfg.solvers.len(),
        cfg.instances
    );
    for path in run_experiment(&cfg, out, threads)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn verify(suite: &str, seed: u64, csv: Option<&Path>) -> Result<()> {
    let report = if suite == "all" {
        run_all(seed)?
    } else {
        run_suite(Suite::parse(suite)?, seed)?
    };
    println!("{report}");
    if let Some(path) = csv {
        report.write_csv(create(path)?)?;
    }
    match report.failures() {
        0 => Ok(()),
        n => Err(CliError::VerifyFailed(n)),
    }
}

fn train(config: &Path, checkpoint: &Path, scenario_out: Option<&Path>, log: Option<&Path>) -> Result<()> {
    let (scenario_cfg, train_cfg) = training_setup(&read_config(config)?)?;
    let s = generate(&scenario_cfg)?;
    let scenario_path = scenario_out.map_or_else(|| checkpoint.with_extension("scenario"), Path::to_path_buf);
    s.dump(create(&scenario_path)?)?;
    info!("scenario written to {}", scenario_path.display());

    let outcome = train_with_progress(&s, &train_cfg, |r| {
        debug!(
            "epoch {} {} objective {:.4} greedy {:.4}",
            r.epoch,
            r.outcome.as_str(),
            r.objective / s.bandwidth(),
            r.greedy_objective / s.bandwidth()
        );
        if (r.epoch + 1) % 100 == 0 {
            info!("epoch {}/{}", r.epoch + 1, train_cfg.episodes);
        }
    })?;
    if let Some(path) = log {
        outcome.log.write_csv(create(path)?, true)?;
    }
    outcome.agents.save_to_path(checkpoint)?;
    info!("checkpoint written to {}", checkpoint.display());
    match (&outcome.aborted, &outcome.best) {
        (Some(reason), _) => return Err(CliError::Diverged(reason.clone())),
        (None, Some((epoch, best))) => info!(
            "best greedy objective {:.4} bit/s/Hz at epoch {epoch}",
            best.objective / s.bandwidth()
        ),
        (None, None) => info!("no feasible greedy evaluation during training"),
    }
    Ok(())
}

fn eval(checkpoint: &Path, scenario: &Path, config: Option<&Path>, episodes: usize, report: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(path) => training_setup(&read_config(path)?)?.1,
        None => TrainConfig::default(),
    };
    let file = File::open(scenario).map_err(|source| CliError::File {
        path: scenario.to_path_buf(),
        source,
    })?;
    let s = Scenario::load(std::io::BufReader::new(file))?;
    let agents = Agents::load_from_path(checkpoint, &cfg)?;
    let policy = evaluate_policy(&s, &agents, &cfg.rollout_settings(&s), episodes)?;
    println!("feasible {}", policy.feasible());
    println!("objective_bps_per_hz {}", policy.objective / s.bandwidth());
    println!("throughput_bps_per_hz {}", policy.throughput);
    println!("effective_throughput_bps_per_hz {}", policy.effective_throughput / s.bandwidth());
    println!("qos_satisfaction {}", policy.qos_satisfaction);
    if let Some(path) = report {
        policy.report.write_csv(create(path)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => run(config, out, *seed, *threads),
        Command::Verify { suite, seed, csv } => verify(suite, *seed, csv.as_deref()),
        Command::Train {
            config,
            checkpoint,
            scenario_out,
            log,
        } => train(config, checkpoint, scenario_out.as_deref(), log.as_deref()),
        Command::Eval {
            checkpoint,
            scenario,
            config,
            episodes,
            report,
        } => eval(checkpoint, scenario, config.as_deref(), *episodes, report.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
