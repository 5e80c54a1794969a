use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable kind, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::EmptyDomain(_) => "empty_domain",
            Error::Lookup(_) => "lookup",
            Error::Alignment(_) => "alignment",
            Error::Parse { .. } => "parse",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Training { .. } => "training",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
