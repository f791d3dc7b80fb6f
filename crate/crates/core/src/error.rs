use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("scorer error: {0}")]
    Scorer(String),

    #[error("remote scorer {endpoint} failed after {attempts} attempts: {message}")]
    Remote {
        endpoint: String,
        attempts: usize,
        message: String,
    },

    #[error("training data is missing classes {0:?}")]
    MissingClasses(Vec<usize>),

    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("token {0:?} is not in the policy vocabulary")]
    UnknownToken(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("reference distribution has no support for token {index} (p = {p})")]
    SupportViolation { index: usize, p: f64 },

    #[error("non-finite loss in episode {episode}")]
    NonFiniteLoss { episode: usize },

    #[error("generator collapsed: mean terminal reward below floor through epoch {epoch}")]
    GeneratorCollapse {
        epoch: usize,
        log: Box<crate::rl::train::TrainingLog>,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
