use thiserror::Error;

/// Errors produced by the laboratory library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    #[error("non-finite loss at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("incompatible parameter sets: {0}")]
    Incompatible(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("contradictory prompt: {0}")]
    Contradictory(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("adapters already merged into a base parameter set")]
    AlreadyMerged,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
