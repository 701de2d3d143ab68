use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdmmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("local solver failed at node {node}: {reason}")]
    Solver { node: usize, reason: String },

    #[error("objective {objective} is not supported with non-consensus constraints at node {node}")]
    UnsupportedPairing { node: usize, objective: &'static str },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PdmmError>;
