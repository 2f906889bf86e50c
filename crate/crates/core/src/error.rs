use std::path::PathBuf;

use crate::lm::LmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("corpus contains no documents")]
    EmptyCorpus,

    #[error("document {0:?} has empty text")]
    EmptyDocument(String),

    #[error("unknown doc_id {doc_id:?} ({context})")]
    UnknownDocId { doc_id: String, context: String },

    #[error("query {0:?} has no text entry")]
    MissingQueryText(String),

    #[error("requested {requested} items but only {available} are available")]
    InsufficientSample { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("language model: {0}")]
    Lm(#[from] LmError),

    #[error("prompt produced unusable output for {dropped} of {attempted} passages")]
    PromptQuality { dropped: usize, attempted: usize },

    #[error("empty completion: {0}")]
    EmptyCompletion(String),

    #[error("corpus has {available} documents but mining needs at least {needed}")]
    CorpusTooSmall { needed: usize, available: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no training triplets")]
    EmptyTriplets,

    #[error("loss became non-finite at step {step}: {diagnostics}")]
    NanLoss { step: usize, diagnostics: String },

    #[error("no positive judgments available")]
    NoPositives,

    #[error("external trainer: {0}")]
    External(String),

    #[error("external trainer timed out after {0:?}")]
    ExternalTimeout(std::time::Duration),

    #[error("validation and test judgments share queries: {0:?}")]
    JudgmentOverlap(Vec<String>),

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
