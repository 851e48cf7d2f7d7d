//! qcorridor: seeded, reproducible experiments on continuously measured
//! two-level systems, configured by JSON and exported as plot-ready CSV.

// `!(x > 0.0)` guards reject NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, ExperimentKind};
use experiments::{run_experiment, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_SUITE: u8 = 4;

#[derive(Parser)]
#[command(name = "qcorridor", version, about = "continuous-measurement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; falls back to QCORRIDOR_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed; overrides the config's `sampling.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config file without running anything.
    Validate { config: PathBuf },
    /// Run the cross-formalism consistency suite for a config.
    Suite {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(|e| e.to_string())
}

fn setup_threads(requested: Option<usize>) {
    let n = requested.or_else(|| {
        std::env::var("QCORRIDOR_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n >= 1 {
            // A second configuration attempt in one process is harmless: the
            // pool keeps its first size and results do not depend on it.
            let _ = qcorridor::exec::configure_thread_pool(n);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(parsed) => {
                println!("ok: {} experiment, output {}", parsed.experiment.name(), parsed.output);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config, out, threads, seed } => dispatch(config, out, threads, seed, None),
        Command::Suite { config, out, threads, seed } => {
            dispatch(config, out, threads, seed, Some(ExperimentKind::ConsistencySuite))
        }
    }
}

fn dispatch(
    config_path: PathBuf,
    out: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
    force_kind: Option<ExperimentKind>,
) -> ExitCode {
    let mut parsed = match load_config(&config_path) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(kind) = force_kind {
        parsed.experiment = kind;
        if let Err(e) = parsed.validate() {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if let Some(s) = seed {
        parsed.sampling.seed = s;
    }
    setup_threads(threads);
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&parsed.output));

    match run_experiment(&parsed, &out_dir) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("artifacts: {}", outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(RunError::SuiteFailure(text)) => {
            eprint!("{text}");
            ExitCode::from(EXIT_SUITE)
        }
        Err(RunError::Numeric(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
