//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An input value is outside the mathematical domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// An API contract was violated (e.g. backward called twice).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A dataset file could not be loaded.
    #[error("load error in {file}{}: {detail}", row.map(|r| format!(", row {r}")).unwrap_or_default())]
    Load {
        file: String,
        row: Option<usize>,
        detail: String,
    },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// The adjacency describes a degenerate (edge-free) graph.
    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    /// The data cannot be stratified into the requested folds.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Training diverged.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// The gradient audit found a mismatch.
    #[error("gradient audit failure: {0}")]
    Audit(String),

    /// A checkpoint file is missing, corrupt, or carries no integrity hash.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}
