use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of an operation (bad state index, unknown
    /// variable, mismatched cardinalities, non-positive factor for MF, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A guard on state-space or table size was exceeded.
    #[error("capacity error: {what} needs {needed}, limit is {limit}")]
    Capacity {
        what: String,
        needed: u128,
        limit: u128,
    },

    /// Zero normalizers, vanishing denominators and similar numeric dead ends.
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// Random instance generation failed within its restart budget.
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn capacity(what: impl Into<String>, needed: u128, limit: u128) -> Self {
        Error::Capacity {
            what: what.into(),
            needed,
            limit,
        }
    }

    /// Process exit code used by the CLI: 1 for bad input, 2 for capacity or
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Parse { .. } | Error::Io(_) => 1,
            Error::Capacity { .. } | Error::Degenerate(_) | Error::Generation(_) => 2,
        }
    }
}
