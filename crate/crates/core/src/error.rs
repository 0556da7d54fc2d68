use thiserror::Error;

use crate::volatility::GarchFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The optimizer ran out of iterations; `best` holds the best fit found.
    #[error("optimizer did not converge: {message}")]
    Convergence {
        message: String,
        best: Option<Box<GarchFit>>,
    },

    #[error("chain is not ergodic: {0}")]
    Ergodicity(String),

    #[error("unsupported chain: {0}")]
    UnsupportedChain(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
