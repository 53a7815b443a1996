use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("cannot split {n} rows: {reason}")]
    Sizing { n: usize, reason: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("optimization diverged at iteration {iteration}: {message}")]
    Optimization { iteration: usize, message: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) => ErrorKind::Config,
            Error::Input(_)
            | Error::Shape { .. }
            | Error::Domain(_)
            | Error::Sizing { .. }
            | Error::Parse { .. }
            | Error::Estimation(_)
            | Error::Fit(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::Optimization { .. } | Error::Numeric(_) => ErrorKind::Numeric,
        }
    }
}
