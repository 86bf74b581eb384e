use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A value is outside the domain the operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    /// A gradient or activation stopped being finite.
    #[error("non-finite value in {block}")]
    Numeric { block: String },

    /// ROC analysis needs both wrong and correct labels.
    #[error("degenerate classes: {0}")]
    DegenerateClass(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(block: impl Into<String>) -> Self {
        Error::Numeric {
            block: block.into(),
        }
    }
}
