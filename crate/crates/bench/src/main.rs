use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nafa_bench::{config::ExperimentConfig, BenchError, Overrides};

#[derive(Parser)]
#[command(name = "nafa-bench", version, about = "Train, evaluate and compare edge-server schedulers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel evaluation workers.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Checkpoint directory (default: <out>/checkpoints).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learning policies and write checkpoints.
    Train,
    /// Evaluate every policy cell on the test trace.
    Evaluate,
    /// Merge report files and flag the best value per column.
    Compare {
        /// Report CSVs (default: <out>/reports.csv).
        inputs: Vec<PathBuf>,
    },
    /// Print a summary of the configured traces.
    TraceInfo,
}

fn load(common: &Common) -> Result<ExperimentConfig, BenchError> {
    let path = common.config.as_ref().ok_or_else(|| BenchError::config("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    Overrides { seed: common.seed, out: common.out.clone() }.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let common = &cli.common;
    match cli.command {
        Command::Train => {
            let cfg = load(common)?;
            let dir = common.checkpoint.clone().unwrap_or_else(|| nafa_bench::default_checkpoint_dir(&cfg));
            for cell in nafa_bench::cmd_train(&cfg, &dir)? {
                match &cell.summary {
                    Some(s) => println!(
                        "{} eta={} rate={}: {} steps, {} target syncs -> {}",
                        cell.policy,
                        cell.eta,
                        cell.arrival_rate,
                        s.steps,
                        s.target_syncs,
                        cell.checkpoint.display()
                    ),
                    None => println!(
                        "{} eta={} rate={} -> {}",
                        cell.policy,
                        cell.eta,
                        cell.arrival_rate,
                        cell.checkpoint.display()
                    ),
                }
            }
        }
        Command::Evaluate => {
            let cfg = load(common)?;
            let dir = common.checkpoint.clone().unwrap_or_else(|| nafa_bench::default_checkpoint_dir(&cfg));
            let reports = nafa_bench::cmd_evaluate(&cfg, &dir, common.workers)?;
            println!("{} cells -> {}", reports.len(), cfg.output_dir.join(nafa_bench::REPORTS_FILE).display());
        }
        Command::Compare { inputs } => {
            let out = match (&common.out, &common.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => load(common)?.output_dir,
                (None, None) => PathBuf::from("."),
            };
            let inputs = if inputs.is_empty() { vec![out.join(nafa_bench::REPORTS_FILE)] } else { inputs };
            let rows = nafa_bench::cmd_compare(&inputs, &out)?;
            print!("{}", nafa_bench::format_comparison(&rows));
        }
        Command::TraceInfo => {
            let cfg = load(common)?;
            print!("{}", nafa_bench::cmd_trace_info(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nafa-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
