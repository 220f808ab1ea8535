//! Classification metrics: accuracy, rank-based AUC, sensitivity, and
//! specificity, plus mean/std aggregation over folds.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Metric values for one evaluation set. Class 1 is the positive class;
/// AUC is `None` when only one class is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub auc: Option<f64>,
    pub sen: f64,
    pub spe: f64,
}

/// Decision threshold for the hard metrics.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Compute all four metrics from class-1 probabilities. The hard
/// metrics threshold at 0.5 (probabilities at exactly 0.5 count as
/// positive); AUC is the Mann-Whitney statistic with ties at half
/// credit. A ratio with an empty denominator reports 0.
pub fn compute_metrics(scores: &[f64], labels: &[usize]) -> Result<Metrics> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "metrics need matching nonempty scores/labels, got {}/{}",
            scores.len(),
            labels.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred1 = s >= DECISION_THRESHOLD;
        match (pred1, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
        }
    }
    let n = scores.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let acc = (tp + tn) as f64 / n as f64;
    let sen = ratio(tp, tp + fne);
    let spe = ratio(tn, tn + fp);

    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = n - positives;
    let auc = if positives == 0 || negatives == 0 {
        None
    } else {
        Some(rank_auc(scores, labels, positives, negatives))
    };
    Ok(Metrics { acc, auc, sen, spe })
}

/// Mann-Whitney AUC via tie-averaged ranks.
fn rank_auc(scores: &[f64], labels: &[usize], positives: usize, negatives: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks, averaged over the tie group.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    u / (positives as f64 * negatives as f64)
}

/// Per-fold metrics with mean and sample standard deviation. The AUC
/// aggregate is present only when every fold had a defined AUC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub mean: Metrics,
    pub std: Metrics,
}

pub fn aggregate(folds: &[Metrics]) -> Result<MetricsAggregate> {
    if folds.is_empty() {
        return Err(Error::Contract("no folds to aggregate".into()));
    }
    let stats = |values: &[f64]| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        // Identical folds must report exactly zero spread.
        let std = if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        (mean, std)
    };
    let (acc_m, acc_s) = stats(&folds.iter().map(|m| m.acc).collect::<Vec<_>>());
    let (sen_m, sen_s) = stats(&folds.iter().map(|m| m.sen).collect::<Vec<_>>());
    let (spe_m, spe_s) = stats(&folds.iter().map(|m| m.spe).collect::<Vec<_>>());
    let aucs: Vec<f64> = folds.iter().filter_map(|m| m.auc).collect();
    let (auc_m, auc_s) = if aucs.len() == folds.len() {
        let (m, s) = stats(&aucs);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(MetricsAggregate {
        mean: Metrics {
            acc: acc_m,
            auc: auc_m,
            sen: sen_m,
            spe: spe_m,
        },
        std: Metrics {
            acc: acc_s,
            auc: auc_s,
            sen: sen_s,
            spe: spe_s,
        },
    })
}
