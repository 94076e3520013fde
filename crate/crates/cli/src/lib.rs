//! Experiment runner: one subcommand per pipeline stage, plus the ablation
//! matrix, the partial-overlap sweep and the cross-teacher run.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

use dflab_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, missing inputs or mismatched artifacts. Exit code 2.
    Config(String),
    /// Training or evaluation failed at run time. Exit code 3.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::LoadFailure { .. }
            | CoreError::RoleMismatch { .. }
            | CoreError::ContractViolation(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
