use thiserror::Error;

/// Errors produced by the protocol building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("authorization error: {0}")]
    Authorization(String),

    #[error("degenerate estimator: effective real count {0} is zero")]
    DegenerateEstimator(f64),

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("padding overflow in dimension {dim}: {count} user values exceed n_p = {n_p}")]
    PaddingOverflow { dim: u32, count: usize, n_p: usize },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("bound `{bound}` is not applicable: {detail}")]
    Validity { bound: &'static str, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
