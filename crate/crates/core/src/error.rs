use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("moment matrix too large: d^t = {size} exceeds the cap of {cap}")]
    DimensionOverflow { size: u128, cap: usize },

    #[error("not enough points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("odd moment order {0} is not supported; use an even order")]
    OddOrder(usize),

    #[error("insufficient batches: need at least {needed}, got {got}")]
    InsufficientBatches { needed: usize, got: usize },

    #[error("batch sampler exhausted after {drawn} batches")]
    SamplerExhausted { drawn: usize },

    #[error("point count {count} is not divisible by batch size {n}")]
    NotDivisible { count: usize, n: usize },

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
