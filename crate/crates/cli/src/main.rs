//! `metalink` command-line tool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "metalink", version, about = "Relational multi-task learning experiments")]
#[command(after_long_help = "Exit codes: 0 success, 2 config or I/O error, 3 runtime error or divergence, 4 gradient check failure.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides. Precedence: flags > METALINK_SEED > file > defaults.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    /// Run configuration (`key = value` lines); run `metalink keys` for the list.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run seed; beats METALINK_SEED and the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; beats the file's `out_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic correlated multi-label dataset as CSV.
    GenData(commands::GenDataArgs),
    /// Train a model; writes checkpoint, history, test report and resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a checkpoint on a split of the configured dataset.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score.
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Test macro AUC over auxiliary ratios and seeds.
    SweepRatio {
        /// Comma-separated ratios in [0,1).
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8")]
        ratios: Vec<f64>,
        #[command(flatten)]
        sweep: commands::SweepArgs,
    },
    /// Test macro AUC over message-passing depths and seeds.
    SweepLayers {
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        layers: Vec<usize>,
        #[command(flatten)]
        sweep: commands::SweepArgs,
    },
    /// Finite-difference check of the full model gradient on random small graphs.
    Gradcheck(commands::GradCheckArgs),
    /// Task-by-task Pearson correlation of labels as an m×m CSV.
    Correlate(commands::CorrelateArgs),
    /// List every config key with its default.
    Keys,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(&args),
        Command::Train { config } => commands::train(&config),
        Command::Eval { checkpoint, split, config } => commands::eval(&checkpoint, &split, &config),
        Command::SweepRatio { ratios, sweep } => commands::sweep_ratio(&ratios, &sweep),
        Command::SweepLayers { layers, sweep } => commands::sweep_layers(&layers, &sweep),
        Command::Gradcheck(args) => commands::gradcheck(&args),
        Command::Correlate(args) => commands::correlate(&args),
        Command::Keys => {
            print!("{}", config::key_help());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
