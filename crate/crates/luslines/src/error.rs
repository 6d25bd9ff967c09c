use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("no pleural-line peak found in the search band")]
    PleuralNotFound,

    #[error("degenerate proximal root: |dF/du| = {derivative:e} below threshold")]
    DegenerateRoot { derivative: f64 },
}

impl Error {
    /// Stable one-word category for machine-parseable CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "numeric",
            Error::PleuralNotFound => "detect",
            Error::DegenerateRoot { .. } => "numeric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
