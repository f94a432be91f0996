use thiserror::Error;

use crate::gateway::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },

    #[error("{kind} `{id}` already exists")]
    AlreadyExists { kind: &'static str, id: String },

    #[error("illegal transition: cannot apply `{event}` in state {from}")]
    IllegalTransition { from: String, event: String },

    #[error("version conflict on `{id}`: expected {expected}, found {actual}")]
    Conflict { id: String, expected: u64, actual: u64 },

    #[error("image `{0}` already decided")]
    AlreadyDecided(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("no strict majority among {0} labels")]
    NoMajority(usize),

    #[error("incomplete data: missing (rater, item) {0:?}")]
    IncompleteData(Vec<(String, String)>),

    #[error("pair `{id}` has {have} labels, at least {need} required")]
    InsufficientLabels { id: String, have: usize, need: usize },

    #[error("model output is missing the `{0}` field")]
    Parse(&'static str),

    #[error("model output unparseable after {attempts} attempts: {last}")]
    ParseExhausted { attempts: u32, last: Box<Error> },

    #[error("backend failed after {attempts} attempts: {last}")]
    Gateway { attempts: u32, last: BackendError },

    #[error("stored blob `{0}` is missing or corrupt")]
    Blob(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable error code, used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Validation(_) => "validation",
            Error::NotFound { .. } => "not_found",
            Error::AlreadyExists { .. } => "already_exists",
            Error::IllegalTransition { .. } => "illegal_transition",
            Error::Conflict { .. } => "conflict",
            Error::AlreadyDecided(_) => "already_decided",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::NoMajority(_) => "no_majority",
            Error::IncompleteData(_) => "incomplete_data",
            Error::InsufficientLabels { .. } => "insufficient_labels",
            Error::Parse(_) => "parse",
            Error::ParseExhausted { .. } => "parse_exhausted",
            Error::Gateway { .. } => "gateway",
            Error::Blob(_) => "blob",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound { kind, id: id.into() }
    }
}
