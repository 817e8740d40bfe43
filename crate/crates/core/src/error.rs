use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus not found: {0}")]
    CorpusNotFound(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("question `{id}`: invalid `{field}`: {message}")]
    Validation {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("duplicate question id `{0}`")]
    DuplicateId(String),

    #[error("question `{id}` has no token_logprobs; supply them in the corpus or pass --synthetic-logprobs SEED")]
    MissingLogprobs { id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(id: &str, field: &'static str, msg: impl Into<String>) -> Self {
        Error::Validation {
            id: id.to_string(),
            field,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 1 usage, 2 validation, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::DuplicateId(_)
            | Error::MissingLogprobs { .. } => 2,
            Error::Numeric(_) => 3,
            Error::CorpusNotFound(_)
            | Error::Io { .. }
            | Error::InvalidArgument(_)
            | Error::Config(_) => 1,
        }
    }
}
