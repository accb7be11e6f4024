//! Crate-wide error type.

use thiserror::Error;

/// Errors from history construction, feature-map surgery, estimation,
/// planning and file parsing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("{kind} index {index} out of range (alphabet size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("history is empty")]
    EmptyHistory,

    #[error("invalid suffix set: {0}")]
    InvalidSuffixSet(String),

    #[error("context {0:?} not present in the suffix set")]
    UnknownContext(String),

    #[error("cannot merge at {0:?}: not all children are present")]
    IllegalMerge(String),

    #[error("state {0} not known to the solution")]
    UnknownState(String),

    #[error("no candidate feature maps given")]
    EmptyCandidates,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition row for state {state}, action {action} is not a probability distribution (sum {sum})")]
    NonStochasticRow {
        state: String,
        action: usize,
        sum: f64,
    },

    #[error("discount factor {0} outside [0, 1)")]
    InvalidGamma(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid action {0} for this environment")]
    InvalidAction(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
