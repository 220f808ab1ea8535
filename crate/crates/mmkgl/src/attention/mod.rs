//! Multi-head relational attention: rewrites adjacency weights from
//! subject features, producing the denoised row-stochastic graph every
//! spectral branch consumes.
//!
//! Edges of the fused graph above a threshold (plus all self-loops)
//! survive into a neighborhood mask. Per head, a learned projection and
//! a single-layer scorer assign each surviving pair a relevance score;
//! a masked row softmax normalizes them, and heads are averaged.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;

/// Negative slope of the scorer activation.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Shape of the attention stack.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub enabled: bool,
    /// Head count Q.
    pub heads: usize,
    /// Per-head hidden width Z.
    pub hidden: usize,
    /// Edge-survival threshold on the fused adjacency.
    pub threshold: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            enabled: true,
            heads: 4,
            hidden: 16,
            threshold: 0.5,
        }
    }
}

/// Trainable pieces of one head, already placed on a tape.
pub struct HeadVars {
    /// F x Z feature projection.
    pub projection: Var,
    /// 2Z x 1 scorer applied to the concatenated pair embedding.
    pub scorer: Var,
}

/// Uniform init for one head given feature width `f` and hidden width
/// `z`: projection in +/-1/sqrt(f), scorer in +/-1/sqrt(2z).
pub fn init_head(f: usize, z: usize, rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>) {
    let pb = 1.0 / (f as f64).sqrt();
    let sb = 1.0 / (2.0 * z as f64).sqrt();
    (
        Array2::from_shape_fn((f, z), |_| rng.random_range(-pb..pb)),
        Array2::from_shape_fn((2 * z, 1), |_| rng.random_range(-sb..sb)),
    )
}

/// Edge-survival mask: keep (i, j) when the fused weight exceeds the
/// threshold, and always keep the diagonal so no softmax row is empty.
pub fn neighbor_mask(adjacency: &Array2<f64>, threshold: f64) -> Array2<bool> {
    Array2::from_shape_fn(adjacency.dim(), |(i, j)| {
        i == j || adjacency[[i, j]] > threshold
    })
}

/// Masked multi-head attention over subject features. Per head, the
/// pair score is `scorer^T [p_i || p_j]` through a leaky ReLU, where
/// `p = features * projection`; scores are row-softmaxed over the mask
/// and averaged across heads. Rows are stochastic; entries off the mask
/// are exactly zero. The output is generally not symmetric.
pub fn attention_scores(
    tape: &Tape,
    features: Var,
    heads: &[HeadVars],
    mask: &Array2<bool>,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::Config("attention needs at least one head".into()));
    }
    let n = tape.shape(features).0;
    if mask.dim() != (n, n) {
        return Err(Error::dim(
            "attention_scores",
            format!("mask {:?} for {n} subjects", mask.dim()),
        ));
    }
    let mut acc: Option<Var> = None;
    for head in heads {
        let z = tape.shape(head.projection).1;
        if tape.shape(head.scorer) != (2 * z, 1) {
            return Err(Error::dim(
                "attention_scores",
                format!(
                    "scorer {:?} does not fit hidden width {z}",
                    tape.shape(head.scorer)
                ),
            ));
        }
        let p = tape.matmul(features, head.projection)?;
        // scorer^T [p_i || p_j] splits into a source term and a target
        // term, which broadcast into the full score matrix.
        let src = tape.matmul(p, tape.rows(head.scorer, 0, z)?)?;
        let dst = tape.matmul(p, tape.rows(head.scorer, z, 2 * z)?)?;
        let scores = tape.add(src, tape.transpose(dst)?)?;
        let scores = tape.leaky_relu(scores, ATTENTION_SLOPE)?;
        let masked = tape.mask_neg_inf(scores, mask)?;
        let head_attn = tape.softmax_row(masked)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, head_attn)?,
            None => head_attn,
        });
    }
    tape.scale(acc.unwrap(), 1.0 / heads.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{max_rel_err, FD_STEP};
    use ndarray::arr2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn mask_with_minus_infinity_threshold_keeps_everything() {
        let a = arr2(&[[0.0, -5.0], [3.0, 0.1]]);
        let m = neighbor_mask(&a, f64::NEG_INFINITY);
        assert!(m.iter().all(|&b| b));
    }

    #[test]
    fn mask_above_max_keeps_only_self_loops() {
        let a = arr2(&[[0.0, 0.9], [0.9, 0.0]]);
        let m = neighbor_mask(&a, 0.9);
        assert_eq!(m, arr2(&[[true, false], [false, true]]));
    }

    #[test]
    fn mask_row_comparison() {
        let a = arr2(&[
            [1.0, 0.3, 0.7],
            [0.3, 1.0, 0.2],
            [0.7, 0.2, 1.0],
        ]);
        let m = neighbor_mask(&a, 0.5);
        assert_eq!(m.row(0).to_vec(), vec![true, false, true]);
    }

    fn make_heads(tape: &Tape, f: usize, z: usize, q: usize, seed: u64) -> Vec<HeadVars> {
        let mut r = rng(seed);
        (0..q)
            .map(|_| {
                let (p, s) = init_head(f, z, &mut r);
                HeadVars {
                    projection: tape.param(p),
                    scorer: tape.param(s),
                }
            })
            .collect()
    }

    #[test]
    fn self_only_row_collapses_to_one() {
        let mut r = rng(2);
        let tape = Tape::new();
        let features = tape.leaf(random(&mut r, 3, 5));
        let heads = make_heads(&tape, 5, 4, 2, 3);
        // Row 1 keeps only its self-loop.
        let mask = arr2(&[
            [true, true, false],
            [false, true, false],
            [true, false, true],
        ]);
        let attn = attention_scores(&tape, features, &heads, &mask).unwrap();
        let a = tape.value(attn);
        assert_eq!(a[[1, 1]], 1.0);
        assert_eq!(a[[1, 0]], 0.0);
        assert_eq!(a[[1, 2]], 0.0);
    }

    #[test]
    fn identical_neighbors_split_attention_evenly() {
        let tape = Tape::new();
        // Subjects 1 and 2 have identical features.
        let features = tape.leaf(arr2(&[
            [0.5, -0.2, 0.8],
            [1.0, 0.3, -0.4],
            [1.0, 0.3, -0.4],
        ]));
        let heads = make_heads(&tape, 3, 4, 3, 7);
        let mask = arr2(&[
            [false, true, true],
            [true, true, false],
            [true, false, true],
        ]);
        let attn = attention_scores(&tape, features, &heads, &mask).unwrap();
        let a = tape.value(attn);
        assert!((a[[0, 1]] - 0.5).abs() <= 1e-12);
        assert!((a[[0, 2]] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn rows_are_stochastic_with_exact_zeros_off_mask() {
        let mut r = rng(5);
        let tape = Tape::new();
        let n = 9;
        let features = tape.leaf(random(&mut r, n, 6));
        let heads = make_heads(&tape, 6, 4, 4, 11);
        let raw = random(&mut r, n, n);
        let mask = neighbor_mask(&raw, 0.2);
        let attn = attention_scores(&tape, features, &heads, &mask).unwrap();
        let a = tape.value(attn);
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if mask[[i, j]] {
                    assert!(a[[i, j]] > 0.0);
                } else {
                    assert_eq!(a[[i, j]], 0.0, "off-mask entry ({i},{j}) must be 0");
                }
                sum += a[[i, j]];
            }
            assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn head_average_preserves_row_stochasticity() {
        let mut r = rng(6);
        for q in [1, 2, 4] {
            let tape = Tape::new();
            let features = tape.leaf(random(&mut r, 5, 4));
            let heads = make_heads(&tape, 4, 3, q, 100 + q as u64);
            let mask = neighbor_mask(&random(&mut r, 5, 5), 0.0);
            let attn = attention_scores(&tape, features, &heads, &mask).unwrap();
            let a = tape.value(attn);
            for i in 0..5 {
                assert!((a.row(i).sum() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(9);
        let features = random(&mut r, 5, 4);
        let weights = random(&mut r, 5, 5);
        let (p1, s1) = init_head(4, 3, &mut r);
        let (p2, s2) = init_head(4, 3, &mut r);
        let mask = neighbor_mask(&random(&mut r, 5, 5), 0.1);

        let build = move |tape: &Tape, vars: &[Var]| {
            let heads = vec![
                HeadVars {
                    projection: vars[0],
                    scorer: vars[1],
                },
                HeadVars {
                    projection: vars[2],
                    scorer: vars[3],
                },
            ];
            let f = tape.leaf(features.clone());
            let attn = attention_scores(tape, f, &heads, &mask)?;
            tape.sum(tape.mul(attn, tape.leaf(weights.clone()))?)
        };
        let err = max_rel_err(&build, &[p1, s1, p2, s2], FD_STEP).unwrap();
        assert!(err <= 1e-4, "rel err {err:.3e}");
    }
}
