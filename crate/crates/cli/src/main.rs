mod commands;

use clap::{Args, Parser, Subcommand};
use cldrm_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Continual learning without forgetting for multi-task damage recognition.
#[derive(Parser, Debug)]
#[command(name = "cldrm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Each one overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment config (JSON) or a run manifest to replay.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Task order, e.g. 1-2-3-4.
    #[arg(long, global = true, value_name = "a-b-c-d")]
    pub order: Option<String>,
    /// Distillation temperature.
    #[arg(long, global = true, value_name = "T")]
    pub temperature: Option<f64>,
    /// Weight of the old-task loss.
    #[arg(long, global = true, value_name = "X")]
    pub lambda: Option<f64>,
    /// cldrm, fine-tuning, feature-extraction, duplicate or joint.
    #[arg(long, global = true, value_name = "NAME")]
    pub strategy: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Full-length schedule and the original per-task image counts.
    #[arg(long, global = true)]
    pub paper_scale: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus file.
    GenerateData,
    /// Train one strategy over the task order.
    Train,
    /// Add one task to a saved network.
    AddTask {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "N")]
        task: u8,
    },
    /// Run all five strategies on one order.
    Compare,
    /// Temperature sweep on the first two tasks of the order.
    SweepTemp {
        /// Comma-separated temperatures (default 1,2,5,10).
        #[arg(long, value_delimiter = ',', value_name = "T,...")]
        temperatures: Vec<f64>,
        /// Comma-separated seeds (default: --seed).
        #[arg(long, value_delimiter = ',', value_name = "N,...")]
        seeds: Vec<u64>,
    },
    /// Every strategy on the six orders of tasks 1-3 followed by task 4.
    SweepOrder {
        #[arg(long, value_delimiter = ',', value_name = "N,...")]
        seeds: Vec<u64>,
    },
    /// Similar or dissimilar two-task experiment.
    Pair {
        /// similar (tasks 1, 2) or dissimilar (tasks 3, 2).
        #[arg(long, default_value = "similar")]
        pair: String,
        #[arg(long, value_delimiter = ',', value_name = "N,...")]
        seeds: Vec<u64>,
    },
    /// Parameter, storage and prediction-pass accounting of every strategy.
    Cost,
    /// Render metric CSVs into summary tables and SVG charts.
    Report {
        /// Directory holding metric CSVs (default: --out).
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                _ => 3,
            })
        }
    }
}
