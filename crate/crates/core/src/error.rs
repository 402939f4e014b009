use alloc::string::String;
use alloc::vec::Vec;

use crate::trace::TraceEvent;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("predictor failure: {0}")]
    Predictor(String),
    #[error("trace integrity: {0}")]
    Integrity(String),
}

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}

/// A decode session that stopped before completion, with the events it had
/// emitted up to the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("decode aborted after {} trace events: {error}", partial_trace.len())]
pub struct DecodeAbort {
    pub error: Error,
    pub partial_trace: Vec<TraceEvent>,
}

impl From<Error> for DecodeAbort {
    fn from(error: Error) -> Self {
        DecodeAbort {
            error,
            partial_trace: Vec::new(),
        }
    }
}
