//! File formats, reports, seeded generators and the command-line driver for
//! `stochdp-core`.

pub mod cli;
pub mod format;
pub mod gen;
pub mod instances;
pub mod report;

/// Failure of a run, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// bad input: exit code 2
    #[error("{0}")]
    Validation(String),
    /// solver outcome such as unboundedness: exit code 3
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<stochdp_core::Error> for CliError {
    fn from(e: stochdp_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
