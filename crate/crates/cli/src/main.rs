//! `cgboost` command-line tool.
//!
//! Exit codes:
//!
//! | code | meaning                                         |
//! |------|-------------------------------------------------|
//! | 0    | success                                         |
//! | 2    | bad command-line usage                          |
//! | 3    | invalid configuration                           |
//! | 4    | invalid or insufficient input data              |
//! | 5    | training or numerical failure                   |
//! | 6    | I/O error                                       |
//! | 7    | unreadable or incompatible model file           |
//! | 8    | gradient check found a mismatch                 |

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cgboost::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cgboost",
    version,
    about = "Sparse-autoencoder + boosted residual CNN price forecaster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (file or directory, depending on the command).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; overrides the configuration.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every row of the given series and write a model file.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input CSV; repeat for pooled training. The file stem names the index.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
    },
    /// Write one-step-ahead forecasts for a series.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Walk-forward backtest; writes report.json, metrics.csv and curves.csv into --out.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
    },
    /// Generate a synthetic OHLC series as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Trading days to generate.
        #[arg(long, default_value_t = 2400)]
        days: usize,
        /// sinusoid, geometric-random-walk or trend+noise.
        #[arg(long, default_value = "sinusoid")]
        regime: String,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per suite.
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Data(_) => 4,
        Error::Shape(_) | Error::Domain(_) | Error::Training(_) => 5,
        Error::Io(_) => 6,
        Error::Format(_) => 7,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CGBOOST_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, data } => commands::train(&common, &data),
        Command::Predict {
            common,
            model,
            data,
        } => commands::predict(&common, &model, &data),
        Command::Evaluate { common, data } => commands::evaluate(&common, &data),
        Command::GenData {
            common,
            days,
            regime,
        } => commands::gen_data(&common, days, &regime),
        Command::Gradcheck { common, cases } => commands::gradcheck(&common, cases),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::GradientMismatch) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
