use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The fixed-point iteration exhausted its budget without certifying the
    /// requested defect.
    #[error(
        "fixed point not reached after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    NoConvergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// A well-posedness diagnostic failed after the solver converged; the
    /// downstream quantity is not defined for this input.
    #[error("ill-posed fluctuation system: {0}")]
    IllPosed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
