use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("time {time} outside [0, {limit}]")]
    TimeOutOfRange { time: f64, limit: f64 },

    #[error("log hazard ratio undefined on interval [{start}, {end}): control hazard is 0 but experimental hazard is positive")]
    UndefinedLogHr { start: f64, end: f64 },

    #[error("degenerate quantity: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
