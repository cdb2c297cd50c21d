use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for {len} coefficients")]
    IndexOutOfRange { index: usize, len: usize },

    /// The rank-one correction of the projection Jacobian needs `beta > 0`.
    #[error("degenerate sign/max pattern: beta = {beta:e} while on the ball boundary")]
    DegeneratePattern { beta: f64 },

    #[error("line search failed after {steps} backtracking steps (directional derivative {slope:e})")]
    LineSearch { steps: usize, slope: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::DimensionMismatch(msg.into()))
}
