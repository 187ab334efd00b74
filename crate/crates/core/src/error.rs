use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("enumeration budget exceeded: {needed:.3e} candidates > cap {cap}")]
    Budget { needed: f64, cap: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bisection bracketing failed: {0}")]
    Bracketing(String),
    #[error("window too small: only {peaks} peaks")]
    WindowTooSmall { peaks: usize },
    #[error("point is not on the family member")]
    NotOnMember,
    #[error("search budget exhausted: {0}")]
    SearchExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;
