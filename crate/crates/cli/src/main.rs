// `!(x > 0.0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gridflow", version, about = "Newton and neural AC power-flow solving")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GRIDFLOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Case file (MATPOWER `.m` or native JSON).
    #[arg(long)]
    pub case: PathBuf,
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the config value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override as KEY=VALUE (dotted keys for nested tables); repeatable.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print case statistics and the network architecture chosen for it.
    Info {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the base case with Newton-Raphson and write `solution.csv`.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        /// Start from the voltages stored in the case instead of a flat start.
        #[arg(long)]
        case_start: bool,
    },
    /// Train a network; writes `model.json`, `trajectory.csv` and `config.toml`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a trained network against Newton at the base case.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also time K random scenarios (batched network vs sequential Newton).
        #[arg(long, value_name = "K")]
        benchmark: Option<usize>,
        #[arg(long, default_value_t = 100)]
        timing_repeats: usize,
    },
    /// Train under each sampling schedule for several seeds and compare.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Size of the held-out uniform set every run is scored on.
        #[arg(long, default_value_t = 1024)]
        eval_points: usize,
    },
    /// Write figure data (trajectory.csv, comparison.csv, meta.json) from a stored run.
    ExportFiguresData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training log written by `train`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::new(error::Kind::Internal, e.to_string()))?;
    }
    match cli.command {
        Command::Info { common } => commands::info(&common),
        Command::Solve { common, out, tol, max_iter, case_start } => {
            commands::solve(&common, &out, tol, max_iter, !case_start)
        }
        Command::Train { common, out } => commands::train(&common, &out),
        Command::Eval { common, checkpoint, out, benchmark, timing_repeats } => {
            commands::eval(&common, &checkpoint, &out, benchmark, timing_repeats)
        }
        Command::Ablate { common, out, seeds, eval_points } => commands::ablate(&common, &out, &seeds, eval_points),
        Command::ExportFiguresData { common, checkpoint, log, out } => {
            commands::export_figures(&common, &checkpoint, &log, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
