//! `pqm`: train and evaluate planning-quasi-metric learners.
//!
//! Subcommands: `train`, `transfer`, `eval-metric`, `rollout`. Defaults
//! come from the chosen environment, a `--config` key=value file overrides
//! them, and explicit CLI flags override the file.
//!
//! Exit codes: 0 success, 2 config error, 3 divergence, 4 checkpoint error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pqm_core::error::Error;
use pqm_core::harness::{
    self, load_checkpoint, resume_training, run_training, run_transfer, write_accuracy_csv,
    PairMode, RunIo, TrainConfig, TrainOutcome,
};
use pqm_core::rng::{tag, SeedStream};
use pqm_core::stats::spearman;

#[derive(Parser)]
#[command(name = "pqm", version, about = "Planning quasi-metric + aimer RL harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learner from scratch, or resume a checkpointed run.
    Train(TrainArgs),
    /// Train a fresh aimer on a new task, transferring the quasi-metric
    /// (and actor) from a source checkpoint.
    Transfer(TransferArgs),
    /// Compute the (true_distance, estimate) table for a trained critic.
    EvalMetric(EvalMetricArgs),
    /// Run greedy episodes from a checkpoint and report aggregates.
    Rollout(RolloutArgs),
}

/// Flags shared by the training-style subcommands; every one of them
/// overrides both the environment defaults and the `--config` file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Environment: bitflip or pointmass.
    #[arg(long)]
    env: Option<String>,
    /// Bit count for the bitflip environment.
    #[arg(long)]
    bits: Option<usize>,
    /// Task: first-half | last-half (bitflip), reach-pos | reach-x (pointmass).
    #[arg(long)]
    task: Option<String>,
    /// Learner: pqm or dqn.
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Goal-distance penalty weight of the aimer objective.
    #[arg(long)]
    lambda1: Option<f64>,
    /// Validity penalty weight of the aimer objective.
    #[arg(long)]
    lambda2: Option<f64>,
    /// key=value file overriding environment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stop once evaluation success reaches this rate.
    #[arg(long)]
    stop_success: Option<f64>,
}

impl ConfigArgs {
    /// defaults <- config file <- CLI flags.
    fn build(&self) -> Result<TrainConfig, Error> {
        let file_pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read config file {}: {e}", path.display()))
                })?;
                TrainConfig::parse_kv_block(&text)?
            }
            None => Vec::new(),
        };
        let env = self
            .env
            .clone()
            .or_else(|| file_pairs.iter().rev().find(|(k, _)| k == "env").map(|(_, v)| v.clone()))
            .unwrap_or_else(|| "bitflip".to_string());
        let mut config = TrainConfig::defaults_for_env(&env)?;
        for (k, v) in &file_pairs {
            config.apply_kv(k, v)?;
        }
        config.env = env;
        if let Some(bits) = self.bits {
            config.bits = bits;
        }
        if let Some(task) = &self.task {
            config.task = task.clone();
        }
        if let Some(learner) = &self.learner {
            config.apply_kv("learner", learner)?;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(l1) = self.lambda1 {
            config.lambda1 = l1;
        }
        if let Some(l2) = self.lambda2 {
            config.lambda2 = l2;
        }
        if let Some(s) = self.stop_success {
            config.stop_success = Some(s);
        }
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Final checkpoint path (default <out>/final.pqm).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume a run from one of its checkpoints.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Source checkpoint holding the trained quasi-metric.
    #[arg(long = "from", value_name = "CHECKPOINT")]
    from: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalMetricArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of (s, s') pairs.
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    /// Pair sampling: in-task or random.
    #[arg(long, default_value = "in-task")]
    mode: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for pair sampling (default: the checkpoint's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Seed for evaluation streams (default: the checkpoint's seed).
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape(_) | Error::UnreachableWithinBudget(_) => 2,
        Error::Divergence(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::Io(_) => 1,
    }
}

fn report_outcome(outcome: &TrainOutcome, io: &RunIo) {
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    match outcome.metrics.last() {
        Some(last) => println!(
            "trained {} epoch(s); final success_rate {:.3}, median_time_to_goal {:.1}",
            outcome.metrics.len(),
            last.success_rate,
            last.median_time_to_goal
        ),
        None => println!("empty run (0 epochs)"),
    }
    println!("metrics: {}", io.metrics_path().display());
    println!(
        "checkpoint: {}",
        io.final_checkpoint
            .clone()
            .unwrap_or_else(|| io.out_dir.join("final.pqm"))
            .display()
    );
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let outcome;
    let io;
    match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            eprintln!(
                "resuming from {} at epoch {} / {}",
                path.display(),
                ckpt.epoch,
                ckpt.config.epochs
            );
            io = make_io(args)?;
            outcome = resume_training(&ckpt, Some(&io))?;
        }
        None => {
            let config = args.config.build()?;
            config.validate()?;
            io = make_io(args)?;
            outcome = run_training(&config, Some(&io))?;
        }
    };
    report_outcome(&outcome, &io);
    Ok(())
}

fn make_io(args: &TrainArgs) -> Result<RunIo, Error> {
    let mut io = RunIo::new(&args.out)?;
    io.final_checkpoint = args.checkpoint.clone();
    Ok(io)
}

fn cmd_transfer(args: &TransferArgs) -> Result<(), Error> {
    let mut config = args.config.build()?;
    config.transfer_from = Some(args.from.display().to_string());
    config.validate()?;
    let source = load_checkpoint(&args.from)?;
    let mut io = RunIo::new(&args.out)?;
    io.final_checkpoint = args.checkpoint.clone();
    let outcome = run_transfer(&config, &source, Some(&io))?;
    report_outcome(&outcome, &io);
    Ok(())
}

fn cmd_eval_metric(args: &EvalMetricArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let learner = harness::learner_from_checkpoint(&ckpt)?;
    let env = ckpt.config.env_instance()?;
    let task = env.task(&ckpt.config.task)?;
    let mode = PairMode::parse(&args.mode)?;
    let seed = args.seed.unwrap_or(ckpt.config.seed);
    let mut stream = SeedStream::derive(seed, &[tag::METRIC_PAIRS]);
    let table = harness::eval_metric_accuracy(&learner, &env, &task, args.pairs, mode, &mut stream)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("metric_accuracy.csv");
    write_accuracy_csv(&path, &table)?;
    let truths: Vec<f64> = table.iter().map(|(t, _)| *t).collect();
    let estimates: Vec<f64> = table.iter().map(|(_, e)| *e).collect();
    println!("pairs: {}", table.len());
    println!("spearman: {:.4}", spearman(&truths, &estimates));
    println!("table: {}", path.display());
    Ok(())
}

fn cmd_rollout(args: &RolloutArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let learner = harness::learner_from_checkpoint(&ckpt)?;
    let mut config = ckpt.config.clone();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let env = config.env_instance()?;
    let task = env.task(&config.task)?;
    let (success_rate, median_time) =
        harness::evaluate(&learner, &config, &env, &task, args.episodes, ckpt.epoch as u64)?;
    println!("episodes: {}", args.episodes);
    println!("success_rate: {success_rate:.4}");
    println!("median_time_to_goal: {median_time:.2}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::EvalMetric(args) => cmd_eval_metric(args),
        Command::Rollout(args) => cmd_rollout(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
