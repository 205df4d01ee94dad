use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value `{value}` for field `{field}`")]
    InvalidField { field: String, value: String },

    #[error("catalog error: {0}")]
    Catalog(String),

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("not enough samples: need at least {needed}, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("evaluation of `{code}` failed: {message}")]
    Evaluation { code: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("search space exhausted: {0}")]
    Exhausted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn field(field: &str, value: impl ToString) -> Self {
        Error::InvalidField {
            field: field.to_string(),
            value: value.to_string(),
        }
    }

    pub(crate) fn parse(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(err: toml::de::Error) -> Self {
        // toml spans are byte offsets; the harness maps them to lines itself
        Error::parse(None, err.message().to_string())
    }
}
