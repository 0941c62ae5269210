use thiserror::Error;

use crate::affinity::DomainId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),

    #[error("no candidate: {0}")]
    NoCandidate(String),

    #[error("not leader (current leader: {})", .hint.as_ref().map(|d| d.as_str()).unwrap_or("unknown"))]
    NotLeader { hint: Option<DomainId> },

    #[error("corrupted log: {0}")]
    CorruptedLog(String),

    /// Scenario or fault-schedule validation failure.
    #[error("{field}{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Validation {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
