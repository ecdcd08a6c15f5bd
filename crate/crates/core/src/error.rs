use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Arguments out of range or of mismatched shape.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed text input. `line` and `field` are 1-based.
    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },

    /// An enumeration would exceed the configured capacity.
    #[error("capacity exceeded: {what} needs 2^{needed_log2} evaluations, limit is 2^{limit_log2}")]
    Capacity {
        what: String,
        needed_log2: u32,
        limit_log2: u32,
    },

    /// A value was used outside of its contract (e.g. an uncertified sampler).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A construction precondition failed; names the inequality that does not hold.
    #[error("construction precondition `{inequality}` failed: {lhs} > {rhs}")]
    Construction {
        inequality: String,
        lhs: String,
        rhs: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
