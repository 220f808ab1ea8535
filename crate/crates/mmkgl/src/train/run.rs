//! The optimization loop with validation-based early stopping, and
//! K-fold cross-validation on top of it.

use super::metrics::{aggregate, compute_metrics, Metrics, MetricsAggregate};
use super::model::{Model, ModelConfig, Prepared};
use super::optimizer::MomentumSgd;
use super::TrainConfig;
use crate::autodiff::{Tape, EPS_PROB};
use crate::data::{make_splits, Dataset, SplitRound};
use crate::error::{Error, Result};
use crate::rng::{derive, substream, Stream};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Result of training one evaluation round.
pub struct FoldOutcome {
    /// Test metrics of the best-validation checkpoint.
    pub metrics: Metrics,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// The model restored to its checkpoint.
    pub model: Model,
    /// Training loss per epoch (the combined objective).
    pub history: Vec<f64>,
    /// Validation accuracy recomputed after restoring the checkpoint;
    /// equals `best_val_acc` exactly.
    pub restored_val_acc: f64,
}

fn class1_scores(probs: &Array2<f64>, idxs: &[usize]) -> Vec<f64> {
    idxs.iter().map(|&i| probs[[i, 1]]).collect()
}

fn subset_labels(labels: &[usize], idxs: &[usize]) -> Vec<usize> {
    idxs.iter().map(|&i| labels[i]).collect()
}

/// Value-side negative log-likelihood of the fusion output over an
/// index set (the validation loss for tie-breaking).
fn nll_on(probs: &Array2<f64>, labels: &[usize], idxs: &[usize]) -> f64 {
    let mut loss = 0.0;
    for &i in idxs {
        let p1 = probs[[i, 1]].clamp(EPS_PROB, 1.0 - EPS_PROB);
        loss -= if labels[i] == 1 {
            p1.ln()
        } else {
            (1.0 - p1).ln()
        };
    }
    loss
}

/// Train on one split round: every epoch replays the whole pipeline
/// (graphs from current projections, fusion, attention, branches,
/// combined loss) on a fresh tape, then applies a momentum step.
/// The checkpoint tracks the best validation accuracy, ties broken by
/// lower validation loss; test metrics come from that checkpoint.
pub fn train_fold(
    dataset: &Dataset,
    round: &SplitRound,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    init_salt: u64,
) -> Result<FoldOutcome> {
    train_config.validate()?;
    if dataset.class_count() != 2 {
        return Err(Error::Config(
            "training currently supports exactly two classes".into(),
        ));
    }
    let prepared = Prepared::build(dataset, round, model_config)?;
    let mut rng = substream(train_config.seed, Stream::Init, init_salt);
    let mut model = Model::init(model_config, &prepared, &mut rng)?;
    let shapes: Vec<(usize, usize)> = model.params.iter().map(|p| p.value.dim()).collect();
    let mut optimizer = MomentumSgd::new(train_config.learning_rate, train_config.momentum, &shapes);

    let mut best: Option<(f64, f64, usize, Vec<super::Param>)> = None;
    let mut since_improve = 0usize;
    let mut history = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 0..train_config.max_epochs {
        epochs_run = epoch + 1;
        let tape = Tape::new();
        // After at least one successful epoch, a numeric-domain failure
        // means the optimizer blew the parameters up.
        let pass = match model.forward(&tape, &prepared) {
            Ok(p) => p,
            Err(e @ (Error::Domain { .. } | Error::DegenerateGraph(_))) if epoch > 0 => {
                return Err(Error::Divergence {
                    epoch,
                    detail: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        };
        let loss = tape.scalar_value(pass.total);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("training loss became {loss}"),
            });
        }
        history.push(loss);

        // Validation state of the parameters the forward pass used.
        let probs = tape.value(pass.probs);
        let val_metrics = compute_metrics(
            &class1_scores(&probs, &prepared.val),
            &subset_labels(&prepared.labels, &prepared.val),
        )?;
        let val_loss = nll_on(&probs, &prepared.labels, &prepared.val);
        let improved = match &best {
            None => true,
            Some((acc, vloss, _, _)) => {
                val_metrics.acc > *acc || (val_metrics.acc == *acc && val_loss < *vloss)
            }
        };
        if improved {
            best = Some((val_metrics.acc, val_loss, epoch, model.params.clone()));
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= train_config.patience {
                break;
            }
        }

        tape.backward(pass.total)?;
        let grads: Vec<Array2<f64>> = pass
            .param_vars
            .iter()
            .map(|&v| tape.grad(v).expect("parameter gradient"))
            .collect();
        optimizer.step(&mut model.params, &grads);
    }

    let (best_val_acc, best_val_loss, best_epoch, best_params) =
        best.expect("at least one epoch ran");
    model.params = best_params;

    // Evaluate the restored checkpoint once.
    let tape = Tape::new();
    let pass = model.forward(&tape, &prepared)?;
    let probs = tape.value(pass.probs);
    let restored_val = compute_metrics(
        &class1_scores(&probs, &prepared.val),
        &subset_labels(&prepared.labels, &prepared.val),
    )?;
    let metrics = compute_metrics(
        &class1_scores(&probs, &prepared.test),
        &subset_labels(&prepared.labels, &prepared.test),
    )?;

    Ok(FoldOutcome {
        metrics,
        best_val_acc,
        best_val_loss,
        best_epoch,
        epochs_run,
        model,
        history,
        restored_val_acc: restored_val.acc,
    })
}

/// Cross-validation shape: K folds, repeated with fresh splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            repeats: 2,
        }
    }
}

/// One fold-level result inside a cross-validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub round: usize,
    pub metrics: Metrics,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Aggregate cross-validation report; serializes to the metrics JSON
/// emitted by the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean: Metrics,
    pub std: Metrics,
    pub config: serde_json::Value,
}

/// K-fold cross-validation with `repeats` independent split draws.
/// Fold-rounds are independent and run on the worker pool; every round
/// gets its own deterministic init stream, so the report is identical
/// no matter how many workers run it.
pub fn cross_validate(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    cv: &CvConfig,
) -> Result<CvReport> {
    if cv.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut jobs = Vec::new();
    for repeat in 0..cv.repeats {
        let split_seed = derive(train_config.seed, repeat as u64);
        let plan = make_splits(dataset, cv.folds, split_seed)?;
        for (round_idx, round) in plan.rounds.iter().enumerate() {
            jobs.push((repeat, round_idx, round.clone()));
        }
    }

    let outcomes: Vec<FoldReport> = jobs
        .into_par_iter()
        .map(|(repeat, round_idx, round)| {
            let salt = (repeat * cv.folds + round_idx) as u64;
            let outcome = train_fold(dataset, &round, model_config, train_config, salt)?;
            Ok(FoldReport {
                repeat,
                round: round_idx,
                metrics: outcome.metrics,
                best_val_acc: outcome.best_val_acc,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.epochs_run,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_fold: Vec<Metrics> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    let MetricsAggregate { mean, std } = aggregate(&per_fold)?;
    let config = serde_json::json!({
        "model": model_config,
        "train": train_config,
        "cv": cv,
    });
    Ok(CvReport {
        folds: outcomes,
        mean,
        std,
        config,
    })
}
