//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors surfaced by tensor algebra, network evaluation, and training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Shapes or dimensions do not line up.
    Shape(String),
    /// A value that must be finite is NaN or infinite.
    NonFinite(String),
    /// A structural precondition was violated (bad config, missing node, ...).
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for building a shape error.
macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(alloc::format!($($arg)*))
    };
}

/// Shorthand for building a non-finite error.
macro_rules! nonfinite_err {
    ($($arg:tt)*) => {
        $crate::error::Error::NonFinite(alloc::format!($($arg)*))
    };
}

/// Shorthand for building an invalid-input error.
macro_rules! invalid_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Invalid(alloc::format!($($arg)*))
    };
}

pub(crate) use {invalid_err, nonfinite_err, shape_err};
