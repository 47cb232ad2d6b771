//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("bottom key {key:?}: value {value:?} is outside the declared domain of {dimension:?}")]
    UnknownCategory {
        key: String,
        dimension: String,
        value: String,
    },

    #[error("duplicate bottom key {0:?}")]
    DuplicateBottomKey(String),

    #[error("bottom key list is empty")]
    EmptyBottom,

    #[error("bottom key {key:?} has no parent in hierarchy level {level:?}")]
    OrphanKey { key: String, level: String },

    #[error("duplicate crossing {0:?} x {1:?}")]
    DuplicateCrossing(String, String),

    #[error("crossing references unknown dimension {0:?}")]
    UnknownDimension(String),

    #[error("unknown node {0:?}")]
    UnknownNode(String),

    #[error("too few complete rows: {rows} retained, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },

    #[error("history does not cover lag {lag} at time {t}")]
    InsufficientHistory { lag: usize, t: i64 },

    #[error("series is constant; correlations are undefined")]
    ConstantSeries,

    #[error("degenerate regression input: {0}")]
    DegenerateFit(String),

    #[error("non-finite value in regression input")]
    NonFiniteInput,

    #[error("node {label:?} (column {index}) has zero error variance")]
    DegenerateNode { index: usize, label: String },

    #[error("covariance factorization failed; try a larger shrinkage intensity")]
    FactorizationFailed,

    #[error("residual pool is empty after exclusions")]
    EmptyResidualPool,

    #[error("{k} sample paths are too few for interval level {level}")]
    TooFewPaths { k: usize, level: f64 },

    #[error("interval level {0} is not present in the interval set")]
    UnknownLevel(f64),

    #[error("record at {0} falls outside every calendar entry")]
    OutsideCalendar(String),

    #[error("holiday calendar entries overlap: {0:?} and {1:?}")]
    OverlappingHolidays(String, String),

    #[error("series too short: length {len}, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("malformed input row {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("{0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
