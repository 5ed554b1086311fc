use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("sequence of {len} tokens is too short; need at least {min}")]
    SequenceTooShort { len: usize, min: usize },

    #[error("content sequence is empty")]
    EmptyContent,

    #[error("index {index} out of range for {len} segments")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),

    #[error("non-finite value in input at position {0}")]
    NonFiniteInput(usize),

    #[error("key context needs {used} tokens but the window is {limit}")]
    BudgetExceeded { used: usize, limit: usize },

    #[error("sequence of {len} tokens exceeds context window of {window}")]
    ContextOverflow { len: usize, window: usize },

    #[error("token id {token} is outside vocabulary of size {vocab_size}")]
    TokenOutOfVocab { token: u32, vocab_size: usize },

    #[error("needle of {needle} tokens does not fit in a haystack of {haystack}")]
    NeedleTooLong { needle: usize, haystack: usize },

    #[error("backend failed while scoring segment {segment_index}: {source}")]
    Backend {
        segment_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("request timed out after {0:?}")]
    Timeout(Duration),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by the model backend or its transport rather than by
    /// local configuration or input.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend { .. }
            | Error::Transport(_)
            | Error::Timeout(_)
            | Error::ProtocolViolation(_)
            | Error::ContextOverflow { .. }
            | Error::MalformedDistribution(_) => true,
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::ConfigInvalid(_) | Error::BudgetExceeded { .. })
    }
}
