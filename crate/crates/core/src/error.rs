use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error(
        "non-finite loss {loss} at epoch {epoch}, step {step} (batch rows {batch_rows:?}); loss history {history:?}"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        batch_rows: Vec<i64>,
        history: Vec<f64>,
    },

    #[error("rewriter backend failed after {attempts} attempt(s): {message}")]
    Backend { attempts: usize, message: String },

    #[error("rewriter authentication rejected: {0}")]
    BackendAuth(String),

    #[error("text classified as {label} could not be rewritten: {source}")]
    RewriteFailed {
        label: crate::corpus::Label,
        probabilities: [f64; crate::corpus::NUM_CLASSES],
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
