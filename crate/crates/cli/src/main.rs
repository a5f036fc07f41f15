use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::{CommonArgs, Effective};

/// Kernelized covariance descriptors and log-Euclidean SVMs for skeleton
/// action recognition.
#[derive(Debug, Parser)]
#[command(name = "kcov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load trials, apply the dataset profile and write a descriptor file.
    Extract,
    /// Write the log-Euclidean Gram matrix of a descriptor file as TSV.
    Gram {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train a one-vs-one SVM on the training descriptors.
    Train,
    /// Evaluate a model on the test descriptors.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Grid-search (sigma, gamma, C) with subject-wise folds on the training split.
    Cv,
    /// Run the built-in numerical self-checks.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_failure: Vec<String>,
    },
    /// Time descriptor extraction at (m, T) and (2m, 2T).
    Bench {
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] kcov::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use kcov::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Provenance(_) => 4,
            CliError::CheckFailed(_) => 1,
            CliError::Core(E::InvalidConfig(_) | E::InvalidKernel(_) | E::InvalidBase(_)) => 2,
            CliError::Core(
                E::MalformedFile { .. }
                | E::SchemaError { .. }
                | E::UnknownSubject(_)
                | E::EmptyFold(_)
                | E::DegenerateLabels(_)
                | E::Format(_),
            ) => 3,
            CliError::Core(_) => 1,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let eff = Effective::resolve(&cli.common)?;
    if let Some(n) = eff.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Extract => commands::extract(&eff),
        Command::Gram { split } => commands::gram(
            &eff,
            match split {
                SplitArg::Train => Some(kcov::Split::Train),
                SplitArg::Test => Some(kcov::Split::Test),
                SplitArg::All => None,
            },
        ),
        Command::Train => commands::train(&eff),
        Command::Eval { model } => commands::eval(&eff, &model),
        Command::Cv => commands::cv(&eff),
        Command::Selfcheck { inject_failure } => commands::selfcheck(&eff, &inject_failure),
        Command::Bench { frames, runs } => commands::bench(&eff, frames, runs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kcov: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
