use thiserror::Error;

/// Errors surfaced by the numeric core, the agent, the controller and the environment.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step index {step} out of range (max episode length {max_len})")]
    StepOutOfRange { step: usize, max_len: usize },
    #[error("replay buffer holds {size} transitions, {requested} requested")]
    InsufficientData { size: usize, requested: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("layout parse error: {0}")]
    Layout(String),
}

pub type Result<T> = std::result::Result<T, Error>;
