//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("joint state space has {size} states, above the cap of {cap}; pass force=true to proceed")]
    StateSpaceCap { size: usize, cap: usize },

    #[error("evidence has probability zero under the model")]
    ImpossibleEvidence,

    #[error("all particle weights vanished; increase the particle count or widen the model")]
    Degeneracy,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
