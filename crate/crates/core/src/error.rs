use std::path::PathBuf;

use thiserror::Error;

use crate::env::ActionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no documents in {}", .0.display())]
    NoDocuments(PathBuf),

    #[error("document `{0}` has no tokens")]
    EmptyDocument(String),

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("unknown query id `{0}`")]
    UnknownQuery(String),

    #[error("query `{0}` has no in-vocabulary terms")]
    EmptyQuery(String),

    #[error("no relevant documents for query `{0}`")]
    NoRelevant(String),

    #[error("relevant set is empty")]
    EmptyRelevantSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("term #{term} has zero probability under the model of `{doc}`")]
    ZeroProbability { term: u32, doc: String },

    #[error("ranked list is empty")]
    EmptyList,

    #[error("cannot fit {topics} topics on {docs} documents")]
    TooManyTopics { topics: usize, docs: usize },

    #[error("unknown topic {0}")]
    UnknownTopic(usize),

    #[error("session already ended")]
    Terminal,

    #[error("response does not fit action {action}: expected {expected}")]
    ResponseMismatch {
        action: ActionId,
        expected: &'static str,
    },

    #[error("no candidate terms remain")]
    NoCandidateTerm,

    #[error("feature dimension mismatch: network expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged: non-finite loss at step {0}")]
    Diverged(u64),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("config: {0}")]
    Config(String),

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
