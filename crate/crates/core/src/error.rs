use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step {step} out of range [{lo}, {hi}]")]
    StepOutOfRange { step: usize, lo: usize, hi: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("rank deficient operator: smallest singular value {0:e}")]
    RankDeficient(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate cloud: no particle has positive weight")]
    DegenerateCloud,

    #[error("non-finite log weight for particle {0}")]
    NonFiniteWeight(usize),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
