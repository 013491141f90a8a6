//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by grid, channel, detector, and harness operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown modulation scheme `{0}` (supported: qpsk)")]
    UnknownScheme(String),

    #[error("bit sequence length {got} does not match required {expected}")]
    BitLengthMismatch { expected: usize, got: usize },

    #[error("grid entry {value} at flat index {index} is not a constellation point")]
    NotAConstellationPoint { index: usize, value: String },

    #[error("index (k={k}, l={l}) out of bounds for {n}x{m} frame")]
    IndexOutOfBounds { k: usize, l: usize, n: usize, m: usize },

    #[error("dimension mismatch: expected {expected_n}x{expected_m}, got {got_n}x{got_m}")]
    DimensionMismatch {
        expected_n: usize,
        expected_m: usize,
        got_n: usize,
        got_m: usize,
    },

    #[error("invalid channel config: {0}")]
    InvalidChannelConfig(String),

    #[error("cannot draw {p} distinct delay indices from [0, {l_tau_max}]")]
    TooManyPaths { p: usize, l_tau_max: usize },

    #[error("noise variance must be positive, got {0}")]
    InvalidNoiseVariance(f64),

    #[error("invalid detector config: {0}")]
    InvalidDetectorConfig(String),

    #[error("exhaustive MAP needs {required} hypotheses, budget is {budget}")]
    MapBudgetExceeded { required: u128, budget: u128 },

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("malformed path record at line {line}: {reason}")]
    MalformedPathRecord { line: usize, reason: String },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
