//! Experiment harness: configuration, convergence sweeps and reports.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, Method, ProblemKind};
pub use experiment::{run_experiment, run_levels, run_oracle, ExperimentOutput, LevelSummary, Target};
pub use report::{fit_slope, ConvergenceRecord, LevelPoint};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] hatqmc::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
