use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the range an operation accepts.
    #[error("{0}")]
    Domain(String),

    /// The message does not fit in the digest that was requested for it.
    #[error("plaintext of {chars} characters exceeds capacity {capacity} at {rotations} rotations")]
    Capacity {
        chars: usize,
        capacity: usize,
        rotations: u16,
    },

    #[error("block {block}: no candidate row reproduces the ciphertext symbol (tampered data or wrong PUF image)")]
    Tamper { block: usize },

    #[error("block {block}: {matches} candidate rows reproduce the ciphertext symbol")]
    Decodability { block: usize, matches: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("sampler did not converge: {}", .0.join(", "))]
    Convergence(Vec<String>),

    #[error("entropy source unavailable: {0}")]
    Environment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used in `ERROR:<category>:` lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Capacity { .. } => "capacity",
            Error::Tamper { .. } => "tamper",
            Error::Decodability { .. } => "decodability",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Degenerate(_) => "degenerate",
            Error::Convergence(_) => "convergence",
            Error::Environment(_) => "environment",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
