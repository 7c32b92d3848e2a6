use std::fmt;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal too short: need at least {required} samples, got {actual}")]
    SignalTooShort { required: usize, actual: usize },

    #[error("search space too large: {count} configurations exceeds the limit of {limit}")]
    SpaceTooLarge { count: u128, limit: u128 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where a parse error happened inside a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub field: Option<String>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}, field `{}`", self.line, field),
            None => write!(f, "line {}", self.line),
        }
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, field: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location {
                line,
                field: field.map(str::to_owned),
            },
            message: message.into(),
        }
    }

    /// Short machine-readable kind, used in the CLI's JSON error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::SignalTooShort { .. } => "signal_too_short",
            Error::SpaceTooLarge { .. } => "space_too_large",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Parse { .. } => "parse",
            Error::Stage { .. } => "stage",
            Error::File { .. } | Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
