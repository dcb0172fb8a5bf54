mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Kernel ODE transport: train RKHS velocity fields by MMD and sample from them.
#[derive(Parser, Debug)]
#[command(name = "kode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write samples of a 2D benchmark distribution to CSV.
    Generate {
        /// pinwheel, two_spirals, moons, eight_gaussians, circles, swissroll or checkerboard.
        name: String,
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a model from a JSON run configuration.
    Train { config: PathBuf },
    /// Draw samples from a trained model.
    Sample {
        model: PathBuf,
        /// Number of draws (forward and conditional sampling).
        #[arg(default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Pull the rows of this CSV back to the standardized reference space.
        #[arg(long, conflicts_with = "condition")]
        backward: Option<PathBuf>,
        /// Comma-separated conditioning values for a triangular model.
        #[arg(long, allow_hyphen_values = true)]
        condition: Option<String>,
    },
    /// Normalized MMD of model samples against a test CSV.
    Evaluate {
        model: PathBuf,
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        reference_seed: u64,
        /// Also write the report as JSON to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Flow states at every integrator step for n reference draws.
    Trajectories {
        model: PathBuf,
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Lotka-Volterra parameter inference against an adaptive Metropolis oracle.
    LotkaVolterra { config: PathBuf },
    /// Randomized checks of the stability and convergence inequalities.
    TheoryCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        mmd_trials: usize,
        #[arg(long, default_value_t = 1_000)]
        ode_trials: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage_msg(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime_msg(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    /// Library errors caused by the caller's input.
    pub fn usage(e: kode::Error) -> Self {
        Self::usage_msg(e.to_string())
    }
}

impl From<kode::Error> for CliError {
    fn from(e: kode::Error) -> Self {
        use kode::Error::*;
        match e {
            DimensionMismatch { .. } | EmptyInput(_) | InvalidParameter(_) | Csv { .. } | ModelFormat(_) => {
                Self::usage(e)
            }
            other => Self::runtime_msg(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime_msg(e.to_string())
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KODE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage_msg(format!("KODE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime_msg(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Generate { name, n, seed, output } => commands::generate(&name, n, seed, &output),
        Command::Train { config } => commands::train(&config),
        Command::Sample {
            model,
            n,
            seed,
            output,
            backward,
            condition,
        } => commands::sample(&model, n, seed, &output, backward.as_deref(), condition.as_deref()),
        Command::Evaluate {
            model,
            test,
            reference_seed,
            report,
        } => commands::evaluate(&model, &test, reference_seed, report.as_deref()),
        Command::Trajectories { model, n, seed, output } => commands::trajectories(&model, n, seed, &output),
        Command::LotkaVolterra { config } => commands::lotka_volterra(&config),
        Command::TheoryCheck {
            seed,
            mmd_trials,
            ode_trials,
            report,
        } => commands::theory_check(seed, mmd_trials, ode_trials, report.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
