//! Crate-wide error type.
//!
//! The variants follow the failure categories that matter to a measurement
//! tool: bad invocations, missing privileges, a broken environment, a
//! mechanism that cannot run on this host, and counter values that do not
//! make sense. The CLI maps each category to a stable exit code, see
//! [`Error::exit_code`].

use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller asked for something invalid (bad flag, bad combination,
    /// precondition violated). Exit code 64.
    #[error("usage error: {0}")]
    Usage(String),

    /// The operation needs a privilege this process does not have.
    /// `required` names the capability or kernel setting. Exit code 2.
    #[error("insufficient privileges: {required} is required to {action}")]
    Privilege { required: String, action: String },

    /// The host is missing something the mechanism needs (path absent,
    /// unreadable tree, ...). Exit code 3.
    #[error("environment error: {0}")]
    Environment(String),

    /// The mechanism cannot work on this platform or CPU vendor. Exit code 3.
    #[error("unsupported mechanism: {0}")]
    UnsupportedMechanism(String),

    /// A counter returned a value that contradicts its configuration,
    /// e.g. a raw reading above the wrap constant.
    #[error("corrupted counter: {0}")]
    CorruptedCounter(String),

    /// The sampler producer died; the session cannot continue.
    #[error("sampler session lost: {0}")]
    SessionLost(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn env(msg: impl Into<String>) -> Self {
        Error::Environment(msg.into())
    }

    pub fn privilege(required: impl Into<String>, action: impl Into<String>) -> Self {
        Error::Privilege {
            required: required.into(),
            action: action.into(),
        }
    }

    /// Stable process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 64,
            Error::Privilege { .. } => 2,
            Error::Environment(_) | Error::UnsupportedMechanism(_) => 3,
            _ => 1,
        }
    }
}
