use std::fmt;

/// Library-wide error type.
///
/// Errors split into two families: `Validation` for malformed inputs
/// (bad files, inconsistent months, contract violations by the caller)
/// and `Compute` for failures arising during otherwise-valid numeric
/// work (divergence, rank deficiency, degenerate statistics). The CLI
/// maps the families onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("compute: {0}")]
    Compute(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl fmt::Display) -> Self {
        Error::Validation(msg.to_string())
    }

    pub fn compute(msg: impl fmt::Display) -> Self {
        Error::Compute(msg.to_string())
    }

    /// True for errors caused by bad input rather than failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Compute(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
