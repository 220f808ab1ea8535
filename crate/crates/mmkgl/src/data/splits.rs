//! Stratified K-fold split plans. Each evaluation round designates one
//! fold as test, the next as validation, and trains on the rest.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use rand::seq::SliceRandom;

/// One evaluation round of a split plan.
#[derive(Debug, Clone)]
pub struct SplitRound {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold assignment for every subject plus the derived rounds.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub k: usize,
    /// `fold_of[i]` is the fold index of subject `i`.
    pub fold_of: Vec<usize>,
    pub rounds: Vec<SplitRound>,
}

impl SplitPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified fold assignment: within each class, subjects are shuffled
/// and dealt so per-fold class counts differ by at most one; each class
/// hands its remainder to the folds that are currently smallest, which
/// also balances total fold sizes to within one subject.
pub fn make_splits(dataset: &Dataset, k: usize, seed: u64) -> Result<SplitPlan> {
    let n = dataset.subjects();
    if k < 2 {
        return Err(Error::Config(format!("fold count must be >= 2, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::Config(format!(
            "need at least {} subjects for {k} folds, got {n}",
            2 * k
        )));
    }
    for (class, count) in dataset.class_counts().into_iter().enumerate() {
        if count < k {
            return Err(Error::Stratification(format!(
                "class {class} has {count} subjects, fewer than {k} folds"
            )));
        }
    }

    let mut rng = substream(seed, Stream::Split, 0);
    let mut fold_of = vec![0usize; n];
    let mut totals = vec![0usize; k];
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..n)
            .filter(|&i| dataset.labels()[i] == class)
            .collect();
        members.shuffle(&mut rng);
        let base = members.len() / k;
        let extra = members.len() % k;
        let mut by_load: Vec<usize> = (0..k).collect();
        by_load.sort_by_key(|&f| (totals[f], f));
        let mut counts = vec![base; k];
        for &f in by_load.iter().take(extra) {
            counts[f] += 1;
        }
        let mut pos = 0;
        for (fold, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                fold_of[members[pos]] = fold;
                pos += 1;
            }
            totals[fold] += count;
        }
    }

    let rounds = (0..k)
        .map(|r| {
            let test_fold = r;
            let val_fold = (r + 1) % k;
            let mut round = SplitRound {
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (subject, &fold) in fold_of.iter().enumerate() {
                if fold == test_fold {
                    round.test.push(subject);
                } else if fold == val_fold {
                    round.val.push(subject);
                } else {
                    round.train.push(subject);
                }
            }
            round
        })
        .collect();

    Ok(SplitPlan { k, fold_of, rounds })
}
