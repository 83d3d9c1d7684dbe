use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("normal matrix is singular")]
    Singular,
    #[error("matrix is not positive definite after jitter retry")]
    NotPositiveDefinite,
    #[error("matrix square root failed: {0}")]
    SquareRoot(String),
    #[error("pencil has no finite, real, positive generalized eigenvalue")]
    NoAdmissibleLambda,
    #[error("generalized eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("non-finite iterate at iteration {0}")]
    NonFinite(usize),
    #[error("{count} candidates exceed the enumeration cap of {cap}")]
    OracleCap { count: u128, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
