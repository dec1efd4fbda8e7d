use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ald::harness::{bench_latency, run_experiment, seed_curve_export, BenchModel, ExperimentConfig, HarnessError};
use ald::pipeline::Mode;

#[derive(Parser)]
#[command(name = "ald", version, about = "Actor-learner distillation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment to its environment-step budget.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        deterministic: bool,
        /// Output directory (overrides `run.output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-step inference latency at batch 1.
    Bench {
        #[arg(long)]
        model: BenchModel,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Per-seed success curves and plateau statistics from run directories.
    Export {
        #[arg(long)]
        runs: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Run {
            config,
            mode,
            seed,
            deterministic,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.deterministic |= deterministic;
            if out.is_some() {
                cfg.output = out;
            }
            cfg.validate()?;
            let (_, summary) = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Bench { model, trials } => {
            let r = bench_latency(model, trials)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::Export { runs } => {
            for c in seed_curve_export(&runs)? {
                let band = c.time_in_band.map_or("n/a".to_string(), |t| format!("{t:.4}"));
                println!("{}\tpoints={}\ttime_in_band={band}", c.run, c.points.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
