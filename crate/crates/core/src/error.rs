//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("identifiability violated: {}", .0.join("; "))]
    Identifiability(Vec<String>),

    #[error("unsupported size: {0}")]
    Unsupported(String),

    #[error("angle inversion out of branch: {0}")]
    InversionDomain(String),

    #[error("singular elevation: sin(phi) = {0:e}")]
    SingularElevation(f64),

    #[error("rank-deficient RIS schedule (condition number {cond:e})")]
    RankDeficientSchedule { cond: f64 },

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("zero input: {0}")]
    ZeroInput(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
