use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed or missing price data; `row` is the 1-based data row (header excluded).
    #[error("invalid price data at row {row}, column `{column}`: {reason}")]
    BadCell {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown ticker(s) {missing:?}; available: {available:?}")]
    UnknownTicker {
        missing: Vec<String>,
        available: Vec<String>,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("forward-bias regime `eavesdrop` requires the allow_forward_bias flag")]
    ForwardBias,

    #[error("archive format error: {0}")]
    Archive(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
