use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sequence length must be at least 1")]
    EmptySequence,

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("exact evaluation limited to T <= {limit}, got T = {requested}")]
    UnsupportedExactSize { requested: usize, limit: usize },

    #[error("divergence is infinite: reference assigns zero mass to a reachable state")]
    InfiniteDivergence,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical collapse: {0}")]
    NumericalCollapse(String),
}

pub type Result<T> = core::result::Result<T, Error>;
