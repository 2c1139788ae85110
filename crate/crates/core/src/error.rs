use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sample too long: current utterance needs {needed} positions, budget is {budget}")]
    SampleTooLong { needed: usize, budget: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no masked positions in batch")]
    NoMaskedPositions,

    #[error("infeasible alignment: {frames} frames cannot cover {phonemes} phonemes")]
    InfeasibleAlignment { frames: usize, phonemes: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("frame error: {0}")]
    Frame(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
