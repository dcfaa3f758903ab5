use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Every violated invariant, one message per field.
    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("first-slot arrival probability {p1:e} is below {p_min:e}; channel unusable")]
    UnusableChannel { p1: f64, p_min: f64 },

    #[error("innovation covariance is numerically singular (det = {0:e})")]
    SingularInnovation(f64),

    #[error("update called without a preceding predict")]
    UpdateWithoutPredict,

    #[error("empty series")]
    EmptySeries,

    #[error("degenerate slot statistics: {0}")]
    DegenerateStatistics(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
