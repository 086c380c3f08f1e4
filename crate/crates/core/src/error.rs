use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An index sequence or tensor input that violates its declared range.
    #[error("input format: {0}")]
    InputFormat(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("no gold triplets to sample a prompt pair from")]
    NoTriplets,

    #[error("span manipulation impossible: no neighbour words on either side")]
    ManipulationImpossible,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index {index} out of range [1, {max}]")]
    Index { index: usize, max: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (prompt={l_prompt}, gen={l_gen}); snapshot: {snapshot:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        l_prompt: f64,
        l_gen: f64,
        snapshot: Option<PathBuf>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            message: message.into(),
        }
    }

    /// Short category tag used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InputFormat(_) => "input",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Argument(_) => "argument",
            Error::Template(_) => "template",
            Error::NoTriplets | Error::ManipulationImpossible => "prompt",
            Error::Shape(_) => "shape",
            Error::Index { .. } => "index",
            Error::Alignment(_) => "alignment",
            Error::NonFiniteLoss { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}
