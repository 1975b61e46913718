//! Command-line front end of the `ocu` binary.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::OcuError;

pub use commands::run;

#[derive(Debug, Parser)]
#[command(name = "ocu", version, about = "Diffractive optical convolution unit simulator and trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Computation is single-threaded so results are
    /// reproducible bit for bit; values other than 1 are accepted and ignored.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Directory for reports and checkpoints.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit OCU phases so each unit reproduces a real-valued kernel.
    FitKernel {
        #[command(flatten)]
        common: Common,
    },
    /// Run the fitted units of a kernel checkpoint over an image.
    Convolve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 8-bit binary PGM.
        #[arg(long)]
        image: PathBuf,
        /// Only this unit; all units by default.
        #[arg(long)]
        kernel: Option<String>,
    },
    /// Train an optical (or electrical) classifier.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
    },
    /// Train a residual denoiser.
    TrainDenoiser {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint, or a freshly initialized network when none is given.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test image for kernel checkpoints.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Throughput and energy estimates.
    Perf {
        #[command(flatten)]
        common: Common,
    },
    /// Write the metaline slot layout of every unit in a checkpoint.
    ExportGeometry {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::FitKernel { common }
            | Command::Convolve { common, .. }
            | Command::TrainClassifier { common }
            | Command::TrainDenoiser { common }
            | Command::Eval { common, .. }
            | Command::Perf { common }
            | Command::ExportGeometry { common, .. } => common,
        }
    }
}

/// Error with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: OcuError,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl Failure {
    pub fn config(error: OcuError) -> Self {
        Self {
            code: EXIT_CONFIG,
            error,
        }
    }

    pub fn runtime(error: OcuError) -> Self {
        let code = if matches!(error, OcuError::Config(_)) {
            EXIT_CONFIG
        } else {
            EXIT_RUNTIME
        };
        Self { code, error }
    }
}

impl From<OcuError> for Failure {
    fn from(e: OcuError) -> Self {
        Failure::runtime(e)
    }
}

/// Parses the process arguments, runs the command and reports errors.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
