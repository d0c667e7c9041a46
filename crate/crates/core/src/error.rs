use thiserror::Error;

/// Errors raised by the game laboratory.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The forcing term is not in the range of the game operator, so no
    /// open-loop saddle point exists.
    #[error("no saddle point: relative range residual {residual:e} exceeds tolerance")]
    NoSaddle { residual: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last ratio {ratio:.4}, beta {beta})")]
    NonConvergence {
        iterations: usize,
        ratio: f64,
        beta: f64,
    },

    #[error("singular control weight at time index {time_index}, node {node} (|det R| = {det:e})")]
    SingularWeight {
        time_index: usize,
        node: usize,
        det: f64,
    },

    #[error("singular linear system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("unsupported case: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
