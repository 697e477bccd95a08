use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("bad magic: expected \"EMB1\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("layer count must be 12, found {0}")]
    LayerCount(u32),

    #[error("dim mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("zero frames")]
    ZeroFrames,

    #[error("conflicting label for speaker {0}")]
    ConflictingLabel(String),

    #[error("age out of range: {0}")]
    AgeOutOfRange(f64),

    #[error("missing required field: {0}")]
    MissingField(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("single-class input: only label {0} present")]
    SingleClass(u8),

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("failed to converge after {iterations} iterations (gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("layer-group mismatch: model trained on {model}, features built for {features}")]
    GroupMismatch { model: String, features: String },

    #[error("corpus validation failed: {0}")]
    Validation(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
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

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
