//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} at byte {offset}")]
    BadVersion { offset: usize, found: u32 },

    #[error("truncated payload at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },

    #[error("dimension overflow: {height} x {width} x {dim} elements exceed the format limit")]
    DimensionOverflow { height: u64, width: u64, dim: u64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },

    #[error("code {code} out of range for vocabulary of size {vocab}")]
    CodeOutOfRange { code: u32, vocab: usize },

    #[error("digit {digit} out of range for channel {channel} with {levels} levels")]
    DigitOutOfRange {
        channel: usize,
        digit: u32,
        levels: u32,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: need at least {needed} vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("vector at position {position} has near-zero norm")]
    ZeroNorm { position: usize },

    #[error("probability row {row} is not stochastic (sum {sum})")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue})")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix square root did not converge (relative residual {residual})")]
    SqrtNonConvergence { residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
