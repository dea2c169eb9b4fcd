// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Coordinates and rows are reported 1-based.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error")]
    Io(#[from] std::io::Error),

    #[error("ingest error at row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("series too short: n = {n}, need at least 4 time points")]
    TooShort { n: usize },

    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("coordinate {coordinate} out of range (d = {d})")]
    InvalidCoordinate { coordinate: usize, d: usize },

    #[error("degenerate variance for coordinate {coordinate}")]
    DegenerateVariance { coordinate: usize },

    #[error("trimmed index range is empty (n = {n}, trim = {trim})")]
    InvalidTrim { n: usize, trim: f64 },

    #[error("lag {lag} must be smaller than the series length {len}")]
    InvalidLag { lag: usize, len: usize },

    #[error("bandwidth {bandwidth} must be smaller than the series length {len}")]
    InvalidBandwidth { bandwidth: usize, len: usize },

    #[error("split subsample too short for coordinate {coordinate}")]
    SplitTooShort { coordinate: usize },

    #[error("level {0} must lie strictly between 0 and 1")]
    InvalidLevel(f64),

    #[error("at least {required} Monte Carlo replicates required, got {got}")]
    InsufficientReplicates { required: usize, got: usize },

    #[error("both sides of the estimated change are empty for coordinate {coordinate}")]
    DegenerateFiltering { coordinate: usize },

    #[error("every coordinate has zero block sums; bootstrap statistic undefined")]
    DegenerateConditionalVariance,

    #[error("model is not stationary: {0}")]
    UnstableModel(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("invalid change plan: {0}")]
    InvalidPlan(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
