use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in an input stream a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud must contain at least one point")]
    EmptyCloud,

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degree of vertex {index} is not positive ({value})")]
    SingularDegree { index: usize, value: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("densification hop {from} -> {to} failed: {source}")]
    Hop {
        from: usize,
        to: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {at}: {message}")]
    Parse { at: Location, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(at: Location, message: impl Into<String>) -> Self {
        Error::Parse {
            at,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    /// Innermost cause, unwrapping densification hop context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Hop { source, .. } => source.root(),
            other => other,
        }
    }
}
