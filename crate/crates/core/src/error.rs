use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("invalid cost: {0}")]
    InvalidCost(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported cost: {0}")]
    UnsupportedCost(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied data rather than solver failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidCost(_)
                | Error::InvalidMeasure(_)
                | Error::Parse(_)
                | Error::UnsupportedCost(_)
                | Error::SizeLimit(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
