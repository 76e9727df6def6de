//! Declarative experiment runner for the joint factorization and latent
//! clustering solvers: presets, seeded Monte-Carlo trials, aggregation and
//! report output.

pub mod algorithms;
pub mod cli;
pub mod config;
pub mod report;
pub mod runner;

/// Harness failures, split by the exit code they map to.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    /// Bad configuration or arguments; exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while computing or writing results; exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}
