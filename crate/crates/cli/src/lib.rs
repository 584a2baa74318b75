//! Experiment runner for the modulating-function estimators: loads a JSON
//! experiment, simulates the plant, sweeps measurement noise, runs the
//! estimators and the super-twisting baseline, and writes tidy CSV.

pub mod config;
pub mod pipeline;
pub mod report;

use thiserror::Error;

pub use config::{preset, resolve, ExperimentConfig, PRESETS};
pub use pipeline::{replicate_seed, run_experiment, ReplicateResult, SummaryRow};
pub use report::{read_summary, render_report, LevelStats};

/// Environment variable overriding the config's master seed.
pub const SEED_ENV: &str = "MODFUN_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure in {module}{}: {message}", window.map(|w| format!(" (window {w})")).unwrap_or_default())]
    Numerical {
        module: &'static str,
        window: Option<usize>,
        message: String,
    },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::MissingInput(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Seed precedence: explicit flag, then `MODFUN_SEED`, then the config.
pub fn effective_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(text) => text
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={text} is not an unsigned integer"))),
        None => Ok(config),
    }
}
