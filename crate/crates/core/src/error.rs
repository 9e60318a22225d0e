use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("no parseable tabular file in {0}")]
    EmptyCorpus(PathBuf),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("backend quota exhausted: {0}")]
    Quota(String),

    #[error("exemplar of kind {found} mixed into a {expected} prompt")]
    MixedExemplarKinds { expected: String, found: String },

    #[error("completion contains no task lines")]
    UnparseableCompletion,

    #[error("no worker could be started: {0}")]
    PoolExhausted(String),

    #[error("replay fixture has no record for candidate {0}")]
    ReplayMiss(String),

    #[error("record for candidate {0} is not executable")]
    NotExecutable(String),

    #[error("record for candidate {0} has no output variables")]
    EmptyOutputs(String),

    #[error("generated summary for candidate {0} names no output variable")]
    SpecRejected(String),

    #[error("intent {0} already carries a specification")]
    AlreadyAugmented(String),

    #[error("mixture ratio {0} requires an auxiliary source")]
    MissingAuxiliary(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomparable snapshots: {0}")]
    Incomparable(String),

    #[error("samples per problem differ: {0}")]
    RaggedSamples(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Failures caused by an external backend or worker rather than by the
    /// caller's inputs.
    pub fn is_infrastructure(&self) -> bool {
        matches!(
            self,
            Error::Backend(_) | Error::Quota(_) | Error::PoolExhausted(_)
        )
    }
}
