//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use hmarl::config::{AlgoKind, TrainConfig};
use hmarl::plot::emit_plot;
use hmarl::trainer::{run_eval, run_train};
use hmarl_core::envs::{oracle_value, EnvOverrides, OracleConfig};
use hmarl_core::gradcheck;

#[derive(Parser)]
#[command(
    name = "hmarl",
    about = "Multi-agent reinforcement learning over hybrid action spaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an algorithm on a built-in environment.
    Train {
        /// pdqn | mapqn | mahhqn
        #[arg(long)]
        algo: String,
        /// hybrid_climb | catch_target
        #[arg(long)]
        env: String,
        /// Flat key=value config file layered over the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Output directory for metrics.jsonl and checkpoint.ckpt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: u64,
        #[arg(long)]
        seed: u64,
    },
    /// Verify every training-loss gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
    /// Exact optimal expected return of a built-in environment.
    Oracle {
        #[arg(long)]
        env: String,
        /// Grid points per continuous action dimension.
        #[arg(long)]
        grid: usize,
        /// Lattice points per position axis (multi-step environments).
        #[arg(long, default_value_t = 9)]
        lattice: usize,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Render success-rate and mean-return curves from metrics files.
    Plot {
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// One or more metrics.jsonl files, one curve each.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train {
            algo,
            env,
            config,
            seed,
            out,
        } => {
            let mut cfg = TrainConfig::defaults(AlgoKind::parse(&algo)?, &env, seed);
            if let Some(path) = config {
                cfg.apply_file(&path)?;
            }
            // CLI flags win over file contents for the run identity.
            cfg.algo = AlgoKind::parse(&algo)?;
            cfg.env = env;
            cfg.seed = seed;
            cfg.validate()?;
            let artifacts = run_train(&cfg, &out)?;
            println!(
                "done: mean return {:.4}, success rate {:.2}",
                artifacts.final_eval.mean_return, artifacts.final_eval.success_rate
            );
            println!("metrics:    {}", artifacts.metrics_path.display());
            println!("checkpoint: {}", artifacts.checkpoint_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let outcome = run_eval(&checkpoint, &env, episodes, seed)?;
            println!(
                "mean return {:.6}  success rate {:.4}",
                outcome.mean_return, outcome.success_rate
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let cases = gradcheck::run_suite(seed, None);
            let mut all_passed = true;
            println!("checking {} losses against central finite differences", cases.len());
            for case in &cases {
                println!(
                    "{}  {:<26} max rel err {:.3e}  ({} coords)",
                    if case.report.passed { "PASS" } else { "FAIL" },
                    case.name,
                    case.report.max_rel_err,
                    case.report.checked,
                );
                all_passed &= case.report.passed;
            }
            Ok(if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Oracle {
            env,
            grid,
            lattice,
            horizon,
            gamma,
        } => {
            let value = oracle_value(
                &env,
                &EnvOverrides::default(),
                &OracleConfig {
                    action_grid: grid,
                    lattice,
                    gamma,
                    horizon,
                    ..Default::default()
                },
            )
            .map_err(|e| anyhow!("{e}"))?;
            println!("{value:.12}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { out, metrics } => {
            emit_plot(&metrics, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
