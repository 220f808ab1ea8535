//! The multi-kernel network: parallel Chebyshev branches of distinct
//! orders, per-branch classification losses, cross-kernel tensor
//! fusion, and the final prediction head.

use crate::autodiff::{Tape, Var, EPS_PROB};
use crate::error::{Error, Result};
use crate::spectral::{chebyshev_apply, LaplacianBundle};
use ndarray::Array2;

/// Negative slope between the two filter layers of a branch.
pub const BRANCH_SLOPE: f64 = 0.2;

/// How branch outputs are combined before the prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Cross-kernel tensor: per-subject outer product of branch
    /// probability vectors, flattened to length t^K.
    Ckdt,
    /// Concatenate branch outputs (width K*t).
    Concat,
    /// Elementwise sum (width t).
    Add,
    /// Learned convex mix of branches (width t).
    Weight,
    /// Elementwise mean (width t).
    Avg,
}

impl FusionMode {
    /// Width of the fusion-head input for class count `t` and `k`
    /// branches.
    pub fn input_width(self, t: usize, k: usize) -> usize {
        match self {
            FusionMode::Ckdt => t.pow(k as u32),
            FusionMode::Concat => k * t,
            FusionMode::Add | FusionMode::Weight | FusionMode::Avg => t,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ckdt" => Ok(FusionMode::Ckdt),
            "concat" => Ok(FusionMode::Concat),
            "add" => Ok(FusionMode::Add),
            "weight" => Ok(FusionMode::Weight),
            "avg" => Ok(FusionMode::Avg),
            other => Err(Error::Config(format!("unknown fusion mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Ckdt => "ckdt",
            FusionMode::Concat => "concat",
            FusionMode::Add => "add",
            FusionMode::Weight => "weight",
            FusionMode::Avg => "avg",
        }
    }
}

/// One branch forward pass: two Chebyshev filter layers with a leaky
/// ReLU between and a row softmax at the end, yielding per-subject
/// class probabilities.
pub fn branch_forward(
    tape: &Tape,
    bundle: &LaplacianBundle,
    features: Var,
    layer1: &[Var],
    layer2: &[Var],
) -> Result<Var> {
    let hidden = chebyshev_apply(tape, bundle, features, layer1)?;
    let hidden = tape.leaky_relu(hidden, BRANCH_SLOPE)?;
    let logits = chebyshev_apply(tape, bundle, hidden, layer2)?;
    tape.softmax_row(logits)
}

/// Binary cross-entropy (class-1 probability against the label) summed
/// over training subjects, with probabilities clamped away from 0 and 1
/// before the logs. Falls back to categorical cross-entropy when the
/// class count exceeds two.
pub fn masked_cross_entropy(
    tape: &Tape,
    probs: Var,
    labels: &[usize],
    train: &[bool],
) -> Result<Var> {
    let (n, t) = tape.shape(probs);
    if labels.len() != n || train.len() != n {
        return Err(Error::dim("masked_cross_entropy", "length mismatch"));
    }
    if !train.iter().any(|&b| b) {
        return Err(Error::Contract("empty training set".into()));
    }
    let mask = tape.leaf(Array2::from_shape_fn((n, 1), |(i, _)| {
        if train[i] {
            1.0
        } else {
            0.0
        }
    }));
    let per_subject = if t == 2 {
        let p1 = tape.clamp(tape.col(probs, 1)?, EPS_PROB, 1.0 - EPS_PROB)?;
        let y = tape.leaf(Array2::from_shape_fn((n, 1), |(i, _)| labels[i] as f64));
        let ones = tape.leaf(Array2::from_elem((n, 1), 1.0));
        let pos = tape.mul(y, tape.log(p1)?)?;
        let neg = tape.mul(tape.sub(ones, y)?, tape.log(tape.sub(ones, p1)?)?)?;
        tape.scale(tape.add(pos, neg)?, -1.0)?
    } else {
        let clamped = tape.clamp(probs, EPS_PROB, 1.0 - EPS_PROB)?;
        let onehot = tape.leaf(Array2::from_shape_fn((n, t), |(i, j)| {
            if labels[i] == j {
                1.0
            } else {
                0.0
            }
        }));
        let ll = tape.mul(onehot, tape.log(clamped)?)?;
        tape.scale(tape.row_sums(ll)?, -1.0)?
    };
    tape.sum(tape.mul(per_subject, mask)?)
}

/// Sum of the per-branch cross-entropy losses over training subjects.
pub fn branch_losses(
    tape: &Tape,
    branch_probs: &[Var],
    labels: &[usize],
    train: &[bool],
) -> Result<Var> {
    if branch_probs.is_empty() {
        return Err(Error::Contract("no branches".into()));
    }
    let mut total: Option<Var> = None;
    for &probs in branch_probs {
        let term = masked_cross_entropy(tape, probs, labels, train)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// Flattened cross-kernel tensor: for each subject the outer product of
/// its branch probability vectors, flattened row-major with the first
/// branch as the slowest-varying axis. Width is t^K.
pub fn build_ckdt(tape: &Tape, branch_probs: &[Var]) -> Result<Var> {
    if branch_probs.is_empty() {
        return Err(Error::Contract("cross-kernel tensor needs branches".into()));
    }
    let t = tape.shape(branch_probs[0]).1;
    for &b in branch_probs {
        if tape.shape(b).1 != t {
            return Err(Error::dim(
                "build_ckdt",
                format!("class-count mismatch: {} vs {t}", tape.shape(b).1),
            ));
        }
    }
    let mut flat = branch_probs[0];
    for &b in &branch_probs[1..] {
        flat = tape.row_kron(flat, b)?;
    }
    Ok(flat)
}

/// Value-side view of a cross-kernel tensor for inspection and tests.
#[derive(Debug, Clone)]
pub struct CrossKernelTensor {
    /// N x t^K flattened tensors, one row per subject.
    pub flat: Array2<f64>,
    pub class_count: usize,
    pub branch_count: usize,
}

impl CrossKernelTensor {
    pub fn from_flat(flat: Array2<f64>, class_count: usize, branch_count: usize) -> Result<Self> {
        if flat.dim().1 != class_count.pow(branch_count as u32) {
            return Err(Error::dim(
                "cross_kernel_tensor",
                format!(
                    "width {} is not {class_count}^{branch_count}",
                    flat.dim().1
                ),
            ));
        }
        Ok(CrossKernelTensor {
            flat,
            class_count,
            branch_count,
        })
    }

    /// Entry for one subject at a multi-index (one class per branch).
    pub fn entry(&self, subject: usize, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.branch_count);
        let mut flat_idx = 0;
        for &a in index {
            flat_idx = flat_idx * self.class_count + a;
        }
        self.flat[[subject, flat_idx]]
    }

    /// Marginalize all axes except `branch`, recovering (up to float
    /// noise) that branch's probability rows.
    pub fn marginal(&self, branch: usize) -> Array2<f64> {
        let n = self.flat.dim().0;
        let t = self.class_count;
        let k = self.branch_count;
        let mut out = Array2::zeros((n, t));
        let stride = t.pow((k - 1 - branch) as u32);
        for i in 0..n {
            for (p, &v) in self.flat.row(i).iter().enumerate() {
                let digit = (p / stride) % t;
                out[[i, digit]] += v;
            }
        }
        out
    }
}

/// Trainable pieces of the prediction head.
pub struct FusionHeadVars {
    /// `input_width x t` linear map.
    pub weight: Var,
    /// `1 x t` bias.
    pub bias: Var,
}

/// Final prediction: a fully connected map over the fused representation
/// followed by a row softmax. Returns (probabilities, logits); the
/// logits feed saliency.
pub fn fusion_forward(tape: &Tape, fused: Var, head: &FusionHeadVars) -> Result<(Var, Var)> {
    let logits = tape.add(tape.matmul(fused, head.weight)?, head.bias)?;
    Ok((tape.softmax_row(logits)?, logits))
}

/// Combine branch outputs according to the fusion mode. `mix` supplies
/// the trainable 1 x K mixing logits and is required exactly for
/// [`FusionMode::Weight`].
pub fn fusion_input(
    tape: &Tape,
    mode: FusionMode,
    branch_probs: &[Var],
    mix: Option<Var>,
) -> Result<Var> {
    if branch_probs.is_empty() {
        return Err(Error::Contract("no branches to fuse".into()));
    }
    match mode {
        FusionMode::Ckdt => build_ckdt(tape, branch_probs),
        FusionMode::Concat => tape.concat_cols(branch_probs),
        FusionMode::Add | FusionMode::Avg => {
            let mut acc = branch_probs[0];
            for &b in &branch_probs[1..] {
                acc = tape.add(acc, b)?;
            }
            if mode == FusionMode::Avg {
                tape.scale(acc, 1.0 / branch_probs.len() as f64)
            } else {
                Ok(acc)
            }
        }
        FusionMode::Weight => {
            let mix = mix.ok_or_else(|| {
                Error::Contract("weight fusion needs mixing parameters".into())
            })?;
            if tape.shape(mix) != (1, branch_probs.len()) {
                return Err(Error::dim(
                    "fusion_input",
                    format!("mix shape {:?}", tape.shape(mix)),
                ));
            }
            let convex = tape.softmax_row(mix)?;
            let mut acc: Option<Var> = None;
            for (k, &b) in branch_probs.iter().enumerate() {
                let scaled = tape.mul(b, tape.entry(convex, 0, k)?)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, scaled)?,
                    None => scaled,
                });
            }
            Ok(acc.unwrap())
        }
    }
}

/// Weighted sum of the three loss terms.
pub fn total_loss(
    tape: &Tape,
    mmge: Var,
    multi_kernel: Var,
    fusion: Var,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
) -> Result<Var> {
    if lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0 {
        return Err(Error::Config("loss weights must be nonnegative".into()));
    }
    let a = tape.scale(mmge, lambda1)?;
    let b = tape.scale(multi_kernel, lambda2)?;
    let c = tape.scale(fusion, lambda3)?;
    tape.add(tape.add(a, b)?, c)
}

#[cfg(test)]
mod tests;
