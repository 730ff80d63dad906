//! Experiment plumbing: environment generators, perturbations, seeded
//! replica runs, and their logs.

pub mod config;
pub mod env;
pub mod experiment;
pub mod lemmas;
pub mod perturb;
pub mod seeds;

use thiserror::Error;

pub use config::{parse_seeds, ExperimentConfig};
pub use env::{generate_env, EnvSpec};
pub use experiment::{run_experiment, run_replica, Replica};
pub use perturb::{perturb, Perturbation};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Log(#[from] navex::runlog::LogError),
    #[error(transparent)]
    Run(#[from] navex::mnm::MnmError),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}
