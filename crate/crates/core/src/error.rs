//! Crate-wide error type.

use std::fmt;
use std::io;

/// Errors produced anywhere in the pipeline.
///
/// The variants map onto the CLI exit codes: `Config`/`Shape` are usage
/// errors (exit 2), `Data`/`Io` are data errors (exit 3) and `Numeric`
/// is a numeric fault (exit 4).
#[derive(Debug)]
pub enum Error {
    /// Tensor dimension or shape mismatch.
    Shape(String),
    /// Non-finite value or other numeric fault.
    Numeric(String),
    /// Invalid configuration or API misuse.
    Config(String),
    /// Malformed dataset, checkpoint or signal file.
    Data(String),
    /// Underlying I/O failure.
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric fault: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
