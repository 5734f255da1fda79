use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward root must be a 1x1 value, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("backward root does not belong to this tape")]
    ForeignRoot,
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("objective is not finite at probe point {index}")]
    NonFiniteProbe { index: usize },
}

#[derive(Debug, Error)]
pub enum OptimizeeError {
    #[error("invalid optimizee spec: {0}")]
    InvalidSpec(String),
    #[error("dataset not available: {0}")]
    DatasetMissing(String),
    #[error("malformed IDX file {path}: {reason}")]
    Idx { path: PathBuf, reason: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum DimensionMismatch {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("checkpoint tensor {index} has shape {got:?}, expected {expected:?}")]
    Shape {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("io error on checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("ladder needs at least two entries to define a validation horizon")]
    LadderTooShort,
    #[error("ladder must be strictly increasing and positive")]
    LadderNotIncreasing,
    #[error("stage {0} is outside the ladder")]
    StageOutOfRange(usize),
    #[error("n_period must be ≥ 1")]
    NPeriod,
    #[error("t_period must be ≥ 1")]
    TPeriod,
    #[error("max_periods must be ≥ n_period")]
    MaxPeriods,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("seed list is empty")]
    NoSeeds,
    #[error("seed list contains duplicates")]
    DuplicateSeeds,
    #[error("evaluation horizon must be ≥ 1")]
    ZeroHorizon,
    #[error("log_every must be ≥ 1")]
    ZeroLogEvery,
    #[error("reports disagree on optimizee or horizon")]
    MismatchedReports,
    #[error(transparent)]
    Optimizee(#[from] OptimizeeError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: key `{key}`: {message}")]
    BadValue {
        key: String,
        line: usize,
        message: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ImitationError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("fewer weights than trajectory steps")]
    WeightsTooShort,
}
