use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A tensor archive whose manifest and payload disagree.
    #[error("tensor archive integrity error in `{tensor}`: {reason}")]
    Integrity { tensor: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    /// Malformed wire payload; `offset` is the byte position inside the line.
    #[error("protocol error at byte {offset}: {reason}")]
    Protocol { offset: usize, reason: String },

    /// Well-formed response carrying an error message from the provider.
    #[error("provider reported error: {0}")]
    ProviderRejected(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }

    /// True for errors raised by the vision-language provider boundary.
    pub fn is_provider(&self) -> bool {
        matches!(
            self,
            Error::ProviderUnavailable(_) | Error::Protocol { .. } | Error::ProviderRejected(_)
        )
    }
}
