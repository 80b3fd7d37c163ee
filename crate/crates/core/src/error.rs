use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PjmpError>;

#[derive(Debug, Error)]
pub enum PjmpError {
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("neuron index {index} out of range for a network of {n} neurons")]
    NeuronOutOfRange { index: usize, n: usize },

    #[error("intensity undefined at potential {0}")]
    IntensityUndefined(String),

    #[error("state function undefined at configuration {0}")]
    FunctionUndefined(String),

    #[error("state space is empty")]
    EmptyStateSpace,

    #[error("state-count budget of {budget} exceeded during enumeration")]
    BudgetExceeded { budget: usize },

    #[error("found {count} closed recurrent classes; the invariant domain must be unique")]
    MultipleClosedClasses { count: usize },

    #[error("state space is not closed under the jump maps (state {state}, neuron {neuron})")]
    NotClosed { state: usize, neuron: usize },

    #[error("stationary solve failed: {0}")]
    SingularSolve(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("kernel ratio diverges: {0}")]
    RatioDivergence(String),

    #[error("nonpositive function value {value} at state {state}")]
    NonPositive { state: usize, value: f64 },

    #[error("observable check failed: {0}")]
    Observable(String),

    #[error("condition on the schedule violated at k = {k}: {reason}")]
    ScheduleCondition { k: usize, reason: String },

    #[error("inequality form violated: {0}")]
    FormViolation(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PjmpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PjmpError::Io {
            path: path.into(),
            source,
        }
    }
}
