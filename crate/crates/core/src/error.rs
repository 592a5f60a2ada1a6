use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate {index} = {value} lies on the unit-cube boundary")]
    CubeBoundary { index: usize, value: f64 },

    #[error("nested sampling replacement failed: {0}")]
    SamplerFailure(String),

    #[error("chain {chain}: adaptation failed: {reason}")]
    AdaptationFailure { chain: usize, reason: String },

    #[error("flow training failed: {0}")]
    TrainingFailure(String),

    #[error("effective sample size undefined: {0}")]
    UndefinedEss(String),

    #[error("bracketing failed: {0}")]
    Bracketing(String),

    #[error("malformed flow file: {0}")]
    FlowFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
