use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {index}: endpoint {node} out of range for {n} nodes")]
    EndpointOutOfRange { index: usize, node: usize, n: usize },

    #[error("self-loop on node {node}")]
    SelfLoop { node: usize },

    #[error("duplicate directed edge {src} -> {dst}")]
    DuplicateEdge { src: usize, dst: usize },

    #[error("{field}[{index}] = {value} is outside [0, 1]")]
    RateOutOfRange {
        field: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{field}: expected length {expected}, got {got}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{field}: {message}")]
    InvalidField { field: &'static str, message: String },

    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("backward called on {0}")]
    NoForward(&'static str),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidField {
            field,
            message: message.into(),
        }
    }
}
