use std::path::PathBuf;

use crate::pipeline::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("predicate {0:?} is defined more than once")]
    DuplicatePredicate(String),
    #[error("invalid template for {predicate:?}: {reason}")]
    InvalidTemplate { predicate: String, reason: String },
    #[error("no template for predicate {predicate:?}{}", index.map(|i| format!(" (triple {i})")).unwrap_or_default())]
    MissingTemplate { predicate: String, index: Option<usize> },
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    Length { len: usize, max: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("corrupt example: {0}")]
    CorruptExample(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("backend: {0}")]
    Backend(String),
    #[error("capability unavailable: {0}")]
    Capability(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nn(#[from] d2t_nn::NnError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
