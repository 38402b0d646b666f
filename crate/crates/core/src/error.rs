use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("sequence of {len} tokens is too short, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no participating clients")]
    EmptyParticipants,

    #[error("aggregation weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("missing layer score for tensor `{0}`")]
    MissingScore(String),

    #[error("cannot select {requested} blocks from a group of {available}")]
    SelectionOutOfRange { requested: usize, available: usize },

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("non-finite metric value {0}")]
    NonFinite(f64),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
