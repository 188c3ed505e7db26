use alloc::string::String;

/// Errors raised by the operators, decompositions and solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("operator has shape {rows}x{cols} but a square operator is required")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator does not provide a transpose")]
    MissingTranspose,

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("quadratic form {value:e} is negative beyond rounding; operator is not SPD")]
    NotSpd { value: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("weight {index} is zero or negative")]
    Weight { index: usize },

    #[error("projected system is singular (rank deficient with zero regularization)")]
    RankDeficient,

    #[error("capability not available: {0}")]
    Capability(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { context, expected, got })
    }
}
