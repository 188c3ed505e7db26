//! Experiment runner for the augmented flexible Krylov solvers: reads a
//! configuration, builds or loads a problem, runs solvers and writes traces,
//! reconstructions and summaries.

pub mod compare;
pub mod config;
pub mod formats;
pub mod problem;
pub mod run;
pub mod trace;

/// Environment variable overriding the output directory of `run`.
pub const OUT_DIR_ENV: &str = "AUGKRYLOV_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// 1 for configuration errors, 2 for failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) | CliError::Io { .. } => 2,
        }
    }
}
