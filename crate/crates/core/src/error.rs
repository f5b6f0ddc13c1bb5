use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular design (Gram condition number {condition:.3e}); use ridge instead")]
    SingularDesign { condition: f64 },

    #[error("degenerate estimator: fitted parameters are identically zero; use ridge")]
    DegenerateEstimator,

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
