use std::path::PathBuf;

use thiserror::Error;

/// Which precondition of the unknown-input observer failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UioFailure {
    Rank,
    Detectability,
}

impl std::fmt::Display for UioFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UioFailure::Rank => f.write_str("rank"),
            UioFailure::Detectability => f.write_str("detectability"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported degenerate system: {0}")]
    UnsupportedDegenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("uio infeasible ({kind}): {detail}")]
    UioInfeasible { kind: UioFailure, detail: String },

    #[error("design infeasible: {0}")]
    DesignInfeasible(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("scenario rejected: {0}")]
    LoadRejected(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in reports and CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::UnsupportedDegenerate(_) => "unsupported-degenerate",
            Error::Numerical(_) => "numerical-failure",
            Error::UioInfeasible { .. } => "uio-infeasible",
            Error::DesignInfeasible(_) => "design-infeasible",
            Error::Parse { .. } => "parse-error",
            Error::LoadRejected(_) => "load-rejected",
            Error::Io { .. } => "io-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
