use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid network structure: {0}")]
    Structure(String),
    #[error("gradient tape does not belong to the current network parameters")]
    InvalidTape,
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("policy produced a non-finite output")]
    PolicyDegenerate,
    #[error("action does not belong to the action space: {0}")]
    InvalidAction(String),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("transition batch mixes policy indices {0} and {1}")]
    BatchIntegrity(usize, usize),
    #[error("snapshot index {got} is not the next expected index {expected}")]
    SnapshotOrder { expected: usize, got: usize },
    #[error("likelihood cache has no entry for snapshot {snapshot}, transition {transition}")]
    CacheIncomplete { snapshot: usize, transition: usize },
    #[error("reuse set selects no stored transitions")]
    EmptyReuse,
    #[error("at least {needed} samples are required, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed store file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
