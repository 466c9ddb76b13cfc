use thiserror::Error;

pub type Result<T> = std::result::Result<T, NalmError>;

#[derive(Debug, Error)]
pub enum NalmError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },

    #[error("{op}: ln of non-positive value {value}")]
    NonPositiveLog { op: &'static str, value: f64 },

    #[error("backward called on an invalid loss node: {0}")]
    InvalidLoss(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
