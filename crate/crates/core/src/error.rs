use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("backward: {0}")]
    Backward(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("parameters are frozen")]
    Frozen,

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("reduced dimension m={m} (T={temperature}) is smaller than the {classes} downstream classes")]
    ReducedDimTooSmall {
        m: usize,
        temperature: usize,
        classes: usize,
    },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-greppable code, printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::LabelOutOfRange { .. } => "E_LABEL",
            Error::IndexOutOfRange { .. } => "E_INDEX",
            Error::Backward(_) => "E_BACKWARD",
            Error::MissingGradient(_) => "E_MISSING_GRAD",
            Error::Frozen => "E_FROZEN",
            Error::InvalidSpec(_) => "E_SPEC",
            Error::EmptyDataset => "E_EMPTY_DATASET",
            Error::InvalidInput(_) => "E_INPUT",
            Error::ReducedDimTooSmall { .. } => "E_REDUCED_DIM",
            Error::Corrupt { .. } => "E_CORRUPT",
            Error::Io { .. } => "E_IO",
            Error::Config(_) => "E_CONFIG",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
