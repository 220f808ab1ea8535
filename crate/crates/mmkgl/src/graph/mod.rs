//! Multi-modal graph embedding: one adaptive similarity graph per
//! modality, fused into a single population adjacency.
//!
//! Continuous modalities get a learned projection followed by pairwise
//! cosine similarity; discrete modalities get attribute-match counts.
//! The fused adjacency is the Hadamard product of the continuous mean
//! and the discrete mean. Projection learning is driven by two
//! regression targets: a supervision graph built from training labels
//! and a function graph built from raw dominant-modality cosines.

use crate::autodiff::{Tape, Var, EPS_NORM};
use crate::data::{MatchRule, ModalityKind, ModalityMatrix};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;

/// Adjacency for a single modality, living on the tape so the fused
/// graph stays differentiable with respect to the projection.
pub struct ModalGraph {
    pub adjacency: Var,
    pub source: String,
    /// Rows whose projection collapsed below the zero-norm cutoff and
    /// were given cosine 0 against all others.
    pub degenerate_rows: usize,
}

/// Uniform init in [-1/sqrt(d), 1/sqrt(d)] for a d-by-h projection.
pub fn init_projection(d: usize, h: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (d as f64).sqrt();
    Array2::from_shape_fn((d, h), |_| rng.random_range(-bound..bound))
}

/// Adaptive graph for one continuous modality: project the features,
/// then take pairwise cosines. Zero-norm projected rows contribute
/// cosine 0 everywhere; the diagonal is pinned at 1. Passing the
/// features as a tape variable keeps the graph differentiable with
/// respect to them as well, which saliency relies on.
pub fn continuous_modal_graph(
    tape: &Tape,
    features: Var,
    projection: Var,
    name: impl Into<String>,
) -> Result<ModalGraph> {
    let projected = tape.matmul(features, projection)?;
    let (unit, degenerate_rows) = tape.row_unit(projected)?;
    let raw = tape.matmul(unit, tape.transpose(unit)?)?;
    let adjacency = tape.finish_cosine(raw)?;
    Ok(ModalGraph {
        adjacency,
        source: name.into(),
        degenerate_rows,
    })
}

/// Attribute-match adjacency for a discrete modality: entry (i, j)
/// counts how many attribute columns declare i and j a match. The
/// diagonal equals the column count (everything self-matches). Not
/// trainable, so this is a plain value.
pub fn discrete_modal_graph(modality: &ModalityMatrix) -> Result<Array2<f64>> {
    if modality.kind != ModalityKind::Discrete {
        return Err(Error::Config(format!(
            "'{}' is not a discrete modality",
            modality.name
        )));
    }
    let data = &modality.data;
    let (n, cols) = data.dim();
    if modality.match_rules.len() != cols {
        return Err(Error::Config(format!(
            "'{}': {} columns but {} match rules",
            modality.name,
            cols,
            modality.match_rules.len()
        )));
    }
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut matches = 0.0;
            for (c, rule) in modality.match_rules.iter().enumerate() {
                let a = data[[i, c]];
                let b = data[[j, c]];
                let hit = match rule {
                    MatchRule::Exact => a == b,
                    // Strict inequality: a difference of exactly theta
                    // does not match.
                    MatchRule::Threshold(theta) => (a - b).abs() < *theta,
                };
                if hit {
                    matches += 1.0;
                }
            }
            adj[[i, j]] = matches;
        }
    }
    Ok(adj)
}

/// Fuse modal graphs into the population adjacency: the elementwise
/// product of the continuous mean and the discrete mean. With no
/// discrete modality the discrete factor degrades to all-ones.
pub fn fuse(tape: &Tape, continuous: &[ModalGraph], discrete: &[Array2<f64>]) -> Result<Var> {
    if continuous.is_empty() {
        return Err(Error::Config(
            "fuse needs at least one continuous graph".into(),
        ));
    }
    let n = tape.shape(continuous[0].adjacency).0;
    for g in continuous {
        if tape.shape(g.adjacency) != (n, n) {
            return Err(Error::dim("fuse", "continuous graphs disagree on size"));
        }
    }
    let mut acc = continuous[0].adjacency;
    for g in &continuous[1..] {
        acc = tape.add(acc, g.adjacency)?;
    }
    let cont_mean = tape.scale(acc, 1.0 / continuous.len() as f64)?;

    let disc_mean = if discrete.is_empty() {
        Array2::from_elem((n, n), 1.0)
    } else {
        let mut mean = Array2::zeros((n, n));
        for d in discrete {
            if d.dim() != (n, n) {
                return Err(Error::dim("fuse", "discrete graph size mismatch"));
            }
            mean += d;
        }
        mean / discrete.len() as f64
    };
    tape.mul(cont_mean, tape.leaf(disc_mean))
}

/// Regression targets for the embedding loss.
pub struct ReferenceGraphs {
    /// Same-label indicator over training pairs (1 same label, 0
    /// different); entries touching non-training subjects are unused.
    pub s_sg: Array2<f64>,
    /// Raw-feature cosine graph of the dominant modality.
    pub s_fg: Array2<f64>,
    /// 1 where both endpoints are training subjects, else 0.
    pub train_pair_mask: Array2<f64>,
    pub train: Vec<bool>,
}

/// Plain-value cosine similarity matrix with the same conventions as
/// the differentiable path: zero-norm rows give cosine 0, diagonal 1.
/// Returns the degenerate-row count.
pub fn cosine_matrix(features: &Array2<f64>) -> (Array2<f64>, usize) {
    let (n, d) = features.dim();
    let mut unit = Array2::zeros((n, d));
    let mut degenerate = 0;
    for i in 0..n {
        let row = features.row(i);
        let norm = row.dot(&row).sqrt();
        if norm <= EPS_NORM {
            degenerate += 1;
        } else {
            for j in 0..d {
                unit[[i, j]] = features[[i, j]] / norm;
            }
        }
    }
    let mut cos = unit.dot(&unit.t());
    cos.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    for i in 0..n {
        cos[[i, i]] = 1.0;
    }
    (cos, degenerate)
}

/// Function graph: raw-feature cosines of the dominant modality, fixed
/// for the whole run.
pub fn build_function_graph(dominant: &Array2<f64>) -> (Array2<f64>, usize) {
    cosine_matrix(dominant)
}

impl ReferenceGraphs {
    /// Build both targets for a split: the supervision graph from the
    /// training labels and the function graph from raw dominant
    /// features.
    pub fn build(labels: &[usize], train: &[bool], dominant: &Array2<f64>) -> Result<Self> {
        let n = labels.len();
        if train.len() != n || dominant.dim().0 != n {
            return Err(Error::dim("reference_graphs", "length mismatch"));
        }
        if !train.iter().any(|&t| t) {
            return Err(Error::Contract("empty training set".into()));
        }
        let mut s_sg = Array2::zeros((n, n));
        let mut mask = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if train[i] && train[j] {
                    mask[[i, j]] = 1.0;
                    if labels[i] == labels[j] {
                        s_sg[[i, j]] = 1.0;
                    }
                }
            }
        }
        let (s_fg, _) = build_function_graph(dominant);
        Ok(ReferenceGraphs {
            s_sg,
            s_fg,
            train_pair_mask: mask,
            train: train.to_vec(),
        })
    }
}

/// The embedding loss terms, kept separate for inspection.
pub struct MmgeLoss {
    /// Sum of both terms.
    pub total: Var,
    /// Squared residual against the supervision graph, restricted to
    /// training pairs.
    pub sg: Var,
    /// Squared residual against the function graph, over all entries.
    pub fg: Var,
}

/// Embedding loss over every continuous modal graph: the supervision
/// term is masked to training pairs (the target is only defined there),
/// the function term covers all entries.
pub fn mmge_loss(tape: &Tape, graphs: &[ModalGraph], refs: &ReferenceGraphs) -> Result<MmgeLoss> {
    if graphs.is_empty() {
        return Err(Error::Contract("mmge_loss needs at least one graph".into()));
    }
    if !refs.train.iter().any(|&t| t) {
        return Err(Error::Contract("empty training set".into()));
    }
    let sg_target = tape.leaf(refs.s_sg.clone());
    let fg_target = tape.leaf(refs.s_fg.clone());
    let mask = tape.leaf(refs.train_pair_mask.clone());

    let mut sg: Option<Var> = None;
    let mut fg: Option<Var> = None;
    for g in graphs {
        let d_sg = tape.mul(tape.sub(g.adjacency, sg_target)?, mask)?;
        let term_sg = tape.sum(tape.mul(d_sg, d_sg)?)?;
        let d_fg = tape.sub(g.adjacency, fg_target)?;
        let term_fg = tape.sum(tape.mul(d_fg, d_fg)?)?;
        sg = Some(match sg {
            Some(acc) => tape.add(acc, term_sg)?,
            None => term_sg,
        });
        fg = Some(match fg {
            Some(acc) => tape.add(acc, term_fg)?,
            None => term_fg,
        });
    }
    let sg = sg.unwrap();
    let fg = fg.unwrap();
    Ok(MmgeLoss {
        total: tape.add(sg, fg)?,
        sg,
        fg,
    })
}
