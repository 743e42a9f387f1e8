use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("undefined probability: {0}")]
    UndefinedProbability(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("no detectable coincidence peak (max {max} counts over flatline {flatline:.3})")]
    NoPeak { max: u64, flatline: f64 },

    #[error("predicted count is zero in cell {0}")]
    ZeroPrediction(usize),

    #[error("missing data for {0}")]
    Missing(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty tolerance box: {0}")]
    EmptyTolerance(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
