//! Training: model assembly, the optimization loop with early stopping,
//! K-fold cross-validation, metrics, and the gradient auditor.

pub mod audit;
pub mod metrics;
pub mod model;
mod optimizer;
pub mod run;

#[cfg(test)]
mod tests;

pub use audit::{audit_gradients, audit_gradients_with_fault, AuditReport, GroupAudit};
pub use metrics::{compute_metrics, Metrics, MetricsAggregate};
pub use model::{Model, ModelConfig, Param, ParamGroup, Prepared};
pub use run::{cross_validate, train_fold, CvConfig, CvReport, FoldOutcome, FoldReport};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Optimization hyperparameters: plain gradient descent with momentum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            max_epochs: 500,
            patience: 50,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Size the global worker pool from `MMKGL_THREADS` (if set). Safe to
/// call repeatedly; only the first call wins.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("MMKGL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
