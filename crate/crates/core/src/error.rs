use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("accumulator bound exceeded: {0}")]
    AccumulatorBound(String),
    #[error("unsupported granularity: {0}")]
    Granularity(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
