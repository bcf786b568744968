//! Configuration, experiment orchestration, and the CLI.

pub mod cli;
pub mod config;
pub mod run;

pub use config::{ExperimentConfig, LambdaChoice, Strategy, TauLocalChoice};
pub use run::{run_comparison, run_estimate, run_simulation, run_sweep, SimRun};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
    #[error(transparent)]
    Learning(#[from] crate::learning::LearningError),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
    #[error(transparent)]
    TimeCost(#[from] crate::timecost::TimeCostError),
    #[error(transparent)]
    Convergence(#[from] crate::convergence::ConvergenceError),
    #[error(transparent)]
    Optim(#[from] crate::optimizer::OptimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration/usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
