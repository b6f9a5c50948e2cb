use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown passage id `{0}`")]
    UnknownPassage(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("dense index built at params version {index} but params are at version {params}")]
    StaleIndex { index: u64, params: u64 },

    #[error("languages `{a}` and `{b}` share vocabulary term `{term}`")]
    VocabularyOverlap { a: String, b: String, term: String },

    #[error("no training samples mined: {0}")]
    NoMinedSamples(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config hash mismatch: run directory has {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::ConfigMismatch { .. } | Error::Invalid(_)
        )
    }

    /// Errors caused by malformed or inconsistent input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateId { .. }
                | Error::Empty(_)
                | Error::UnknownPassage(_)
                | Error::VocabularyOverlap { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Checkpoint(_)
        )
    }
}
