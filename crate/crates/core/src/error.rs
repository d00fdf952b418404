use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A network specification violates one of its structural invariants.
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    /// Matrix or trace dimensions disagree with what an operation expects.
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The requested quantity is not defined for the given input (e.g. a non-Pfaffian activation).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A precondition of a bound does not hold for the supplied parameters.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    /// Malformed binary input; `offset` is the byte position where parsing failed.
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at iteration {iteration}: {what}")]
    Divergence { iteration: u64, what: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl core::fmt::Display,
    found: impl core::fmt::Display,
) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

macro_rules! bail_arg {
    ($($t:tt)*) => {
        return Err($crate::error::Error::InvalidArgument(alloc::format!($($t)*)))
    };
}
pub(crate) use bail_arg;
