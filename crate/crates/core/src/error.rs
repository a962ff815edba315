//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The distractor pool cannot supply enough units of one modality.
    #[error("distractor pool exhausted for {modality} units: need {needed}, have {available}")]
    PoolExhausted {
        modality: &'static str,
        needed: usize,
        available: usize,
    },

    /// The prompt does not fit the backend's context window.
    #[error("context overflow: prompt requires {required} tokens, backend window is {available}")]
    ContextOverflow { required: usize, available: usize },

    /// A span selector referenced a span the layout does not know.
    #[error("unknown span: {0}")]
    SpanLookup(String),

    /// Inconsistent or unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A head selection asked for more heads than the eligible pool holds.
    #[error("selection pool too small: requested {requested} heads, {eligible} eligible")]
    SelectionPool { requested: usize, eligible: usize },

    /// Two head sets cannot be compared (size or address-space mismatch).
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    /// Sparsity is undefined when no head has positive calibrated score.
    #[error("no positive calibrated score mass in table")]
    NoPositiveMass,

    /// A dataset violates the contract of the operation consuming it.
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// A prompt layout is missing information the operation needs.
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// The requested binding cannot be provided; lists the missing hooks.
    #[error("backend capability missing: {}", missing.join(", "))]
    Capability { missing: Vec<String> },

    /// A persisted artifact could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
