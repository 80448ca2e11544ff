use thiserror::Error;

use crate::dataset::SlsFailureReport;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank deficiency: {0}")]
    Rank(String),
    #[error("no invertible row permutation: {0}")]
    NoPermutation(String),
    #[error("ball touches cone apex: distance {distance} <= radius {radius}")]
    BallTouchesApex { distance: f64, radius: f64 },
    #[error("degenerate direction: class {0} mean coincides with the barycenter")]
    DegenerateDirection(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inconsistency: {0}")]
    Inconsistency(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("not sequentially linearly separable: {0}")]
    NotSeparable(SlsFailureReport),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("infeasible cone: {0}")]
    InfeasibleCone(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema version {0}")]
    Version(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {} column {}: {}", e.line(), e.column(), e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
