use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: invalid field `{field}`: {message}")]
    Parse {
        file: String,
        field: String,
        message: String,
    },
    #[error("empty registry")]
    EmptyRegistry,
    #[error("surface {0:?} is already in the vocabulary")]
    DuplicateSurface(String),
    #[error("name {0:?} encodes to zero base tokens")]
    EmptyName(String),
    #[error("token {0} is not an atomic tool token")]
    NotAtomic(u32),
    #[error("missing atomic token for {0:?}")]
    MissingAtomicToken(String),
    #[error("tools {first} and {second} map to the same token sequence")]
    IndexCollision { first: usize, second: usize },
    #[error("invalid index scheme: {0}")]
    InvalidScheme(String),
    #[error("sequence {0} is empty")]
    EmptySequence(usize),
    #[error("sequence {0} contains the terminator token")]
    TerminatorInSequence(usize),
    #[error("no sequences to build a trie from")]
    EmptyTrie,
    #[error("smoothing must be positive, got {0}")]
    InvalidSmoothing(f64),
    #[error("no training pairs")]
    NoTrainingPairs,
    #[error("annotation {annotation}: cannot resolve tool {name:?}")]
    UnresolvedTool { annotation: usize, name: String },
    #[error("cannot resolve action {0:?}")]
    UnresolvedAction(String),
    #[error("tool {0} is not in the index")]
    UnindexedTool(usize),
    #[error("invalid configuration: {0}")]
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

    pub(crate) fn parse(
        file: impl Into<String>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}
