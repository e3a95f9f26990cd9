use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("insufficient history: need at least {required} rows, got {available}")]
    Warmup { required: usize, available: usize },

    #[error("volatility initialisation needs {required} returns, got {available}")]
    VolInit { required: usize, available: usize },

    #[error("window error: {0}")]
    Window(String),

    #[error("batching error: {0}")]
    Batching(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error("search failed: {0}")]
    Search(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("degenerate support: all {0} quantiles are equal")]
    DegenerateSupport(usize),

    #[error("standardisation error: {0}")]
    Standardization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Grad(#[from] ndgrad::GradError),
}

impl QuantError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QuantError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a defect or environment failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            QuantError::Parse { .. }
                | QuantError::Validation(_)
                | QuantError::Domain(_)
                | QuantError::Dimension(_)
                | QuantError::Alignment(_)
                | QuantError::Warmup { .. }
                | QuantError::VolInit { .. }
                | QuantError::Window(_)
                | QuantError::Batching(_)
                | QuantError::Lookup { .. }
                | QuantError::DegenerateSupport(_)
                | QuantError::Standardization(_)
                | QuantError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, QuantError>;
