mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

/// Failure classes mapped onto exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Usage, configuration or input-file problems. Exit 2.
    #[error("{0}")]
    Config(String),
    /// Numerical failures and failed checks. Exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "idpdiff", version, about = "Identity-preserving conditional diffusion at toy scale")]
pub struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, short, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Place identity anchors on the sphere and write them as CSV.
    Anchors {
        /// Output CSV; defaults to `<reports>/anchors.csv`.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train the denoiser and write a checkpoint plus a loss CSV.
    Train,
    /// Draw one sample from the trained model.
    Sample(SampleArgs),
    /// Generate a labeled synthetic dataset.
    Gendata {
        /// Identity-level worker threads; output does not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Similarity statistics of a dataset, optionally a paired guidance comparison.
    Eval {
        /// Dataset CSV; defaults to `paths.dataset`.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Measure preservation against identity anchors instead of per-sample targets.
        #[arg(long)]
        anchor_relative: bool,
        /// Also run the paired comparison configured in the `compare` section.
        #[arg(long)]
        compare_guidance: bool,
    },
    /// Run the numerical oracle suite.
    Verify,
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the effective configuration, defaults included.
    Dump,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Target identity direction, comma separated; normalized. Random when omitted.
    #[arg(long, value_name = "Y0,Y1,...", allow_hyphen_values = true)]
    pub id_vector: Option<String>,
    /// Perturb the identity direction to this cosine.
    #[arg(long, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    /// Attributes `age,yaw,pitch,roll`; neutral when omitted.
    #[arg(long, value_name = "AGE,YAW,PITCH,ROLL", allow_hyphen_values = true)]
    pub attrs: Option<String>,
    /// Write the chain trajectory to this CSV.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Also write the sample JSON here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
