//! Error type shared by all modules.

use std::io;

/// Errors produced by dataset validation, kernel evaluation, estimators,
/// tests, and samplers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is not on the probability simplex: {reason}")]
    NotOnSimplex { reason: String },

    #[error("label {label} outside 1..={classes}")]
    BadLabel { label: i64, classes: usize },

    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate bandwidth: median pairwise distance is zero (all predictions identical); consider a fixed bandwidth or the mean total variation formula")]
    DegenerateBandwidth,

    #[error("unsupported kernel structure: {0}")]
    UnsupportedKernel(String),

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("empty input")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn bad_param(msg: impl Into<String>) -> Self {
        Error::BadParameter(msg.into())
    }
}
