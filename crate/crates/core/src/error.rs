use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug)]
pub enum Error {
    /// A value violates a documented precondition (degenerate box, bad ratio, ...).
    InvalidInput(String),
    /// Input data was well-formed but semantically wrong (class id out of range, ...).
    Validation(String),
    /// A line in a text input could not be parsed.
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    /// Tensor or parameter dimensions disagree.
    Shape(String),
    /// A caller broke an API contract (mismatched backward cache, TP with no ground truth).
    Contract(String),
    /// The requested clustering cannot be satisfied by the data.
    Infeasible(String),
    /// Non-finite or otherwise unusable numeric values.
    Numeric(String),
    /// Image decode/encode problem.
    Format(String),
    Io(std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::Parse { file, line, msg } => {
                write!(f, "parse error in {}:{line}: {msg}", file.display())
            }
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}
