use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("arity mismatch: expected {expected}, got {actual}")]
    Arity { expected: usize, actual: usize },

    #[error("dimension mismatch: {left} vs {right} qubits")]
    Dimension { left: usize, right: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid angle assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined estimate: no valid rounds")]
    UndefinedEstimate,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unknown key '{0}'")]
    UnknownKey(String),

    #[error("strategy protocol violation: {0}")]
    Protocol(String),

    #[error("observed pass probability {observed} is below the zero-loss threshold {threshold}")]
    BelowThreshold { observed: f64, threshold: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
