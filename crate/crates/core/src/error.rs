use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("iteration diverged: {0}")]
    Diverged(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("state evolution did not converge at delta = {delta}")]
    Indeterminate { delta: f64 },
    #[error("bracket [{lo}, {hi}] does not straddle a transition")]
    Bracket { lo: f64, hi: f64 },
    #[error("problem too large for reference BP: {entries} entries (limit {limit})")]
    TooLarge { entries: usize, limit: usize },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericDomain(_)
                | Error::Diverged(_)
                | Error::Indeterminate { .. }
                | Error::Bracket { .. }
                | Error::Singular(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
