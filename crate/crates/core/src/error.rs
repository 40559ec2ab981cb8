use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("covariance is singular or not positive definite after regularization")]
    SingularCovariance,
    #[error("SH degree {requested} exceeds coefficient degree {available}")]
    ShDegree { requested: usize, available: usize },
    #[error("point at depth {depth} is behind the near plane {near}")]
    Culled { depth: f64, near: f64 },
    #[error("cannot render an empty Gaussian cloud")]
    EmptyCloud,
    #[error("backward pass requires a forward pass recorded for gradients")]
    MissingAux,
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension { what: &'static str, expected: usize, actual: usize },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, actual })
    }
}
