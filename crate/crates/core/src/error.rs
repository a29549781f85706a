use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Mismatched or invalid tensor dimensions.
    Shape(String),
    /// An argument violated a precondition (empty batch, negative lambda, ...).
    InvalidArgument(String),
    /// A named lookup failed (projection head, prototype, class).
    NotFound(String),
    /// A loss or gradient became non-finite.
    NonFinite(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape(m) => write!(f, "shape error: {m}"),
            CoreError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            CoreError::NotFound(m) => write!(f, "not found: {m}"),
            CoreError::NonFinite(m) => write!(f, "non-finite value: {m}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

pub(crate) fn shape_err(msg: impl fmt::Display) -> CoreError {
    CoreError::Shape(alloc::format!("{msg}"))
}

pub(crate) fn invalid(msg: impl fmt::Display) -> CoreError {
    CoreError::InvalidArgument(alloc::format!("{msg}"))
}
