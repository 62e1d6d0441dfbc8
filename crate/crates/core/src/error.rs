use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value encountered while evaluating {0}")]
    DivergedEvaluation(&'static str),

    #[error("hessian-vector product requested along a zero direction")]
    InvalidDirection,

    #[error("dense oracle limited to n <= {limit}, got n = {n}")]
    OracleSizeExceeded { n: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gradient is exactly zero; directional curvature undefined")]
    ZeroGradient,

    #[error("index {index} has no neighbours in a series of length {len}")]
    BoundaryUndefined { index: usize, len: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("window [{start}, {end}) not covered by series of length {len}")]
    InsufficientWindow { start: i64, end: i64, len: usize },

    #[error("oracle misuse: {0}")]
    OracleMisuse(String),

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset I/O: {0}")]
    Dataset(String),
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::DivergedEvaluation(what))
    }
}

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
