//! Normalized graph Laplacians and Chebyshev-polynomial spectral
//! filtering, the computational core of every kernel branch.
//!
//! The attention output is row-stochastic and asymmetric, while the
//! spectral theory needs a symmetric operator, so the adjacency is
//! symmetrized first. The rescaled Laplacian uses the dominant
//! eigenvalue from a converged power iteration instead of the common
//! fixed bound of 2, keeping the filter spectrum tight for weighted
//! graphs.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Degrees at or below this count as zero (isolated node convention).
const EPS_DEGREE: f64 = 1e-12;

/// Laplacian operators for one adjacency, all on the tape so gradients
/// flow back into the attention parameters that shaped the graph.
pub struct LaplacianBundle {
    /// Normalized Laplacian `I - D^{-1/2} A_sym D^{-1/2}`.
    pub laplacian: Var,
    /// Rescaled operator `2 L / lambda_max - I` with spectrum in [-1, 1].
    pub rescaled: Var,
    /// Dominant eigenvalue of the Laplacian (1x1), floored at 1e-6.
    pub lambda_max: Var,
    /// Plain value of the floored eigenvalue, for reporting.
    pub lambda_max_value: f64,
}

/// Build the Laplacian bundle from a (possibly asymmetric) nonnegative
/// adjacency. Zero-degree rows get a zero inverse-square-root degree,
/// so isolated nodes reduce to bare self-terms.
pub fn build_laplacian(tape: &Tape, adjacency: Var) -> Result<LaplacianBundle> {
    let (n, m) = tape.shape(adjacency);
    if n != m {
        return Err(Error::dim("build_laplacian", format!("{n}x{m} adjacency")));
    }
    let (any_edge, min_entry) = tape.with_value(adjacency, |a| {
        let mut any = false;
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let sym = 0.5 * (a[[i, j]] + a[[j, i]]);
                min = min.min(sym);
                if sym != 0.0 {
                    any = true;
                }
            }
        }
        (any, min)
    });
    if !any_edge {
        return Err(Error::DegenerateGraph(
            "all-zero adjacency has no spectral structure".into(),
        ));
    }
    if min_entry < -1e-9 {
        return Err(Error::domain(
            "build_laplacian",
            format!("negative symmetrized entry {min_entry}"),
        ));
    }

    let sym = tape.scale(tape.add(adjacency, tape.transpose(adjacency)?)?, 0.5)?;
    let degrees = tape.row_sums(sym)?;
    let inv_sqrt = tape.rsqrt_or_zero(degrees, EPS_DEGREE)?;
    let scaling = tape.mul(inv_sqrt, tape.transpose(inv_sqrt)?)?;
    let eye = tape.leaf(Array2::eye(n));
    let laplacian = tape.sub(eye, tape.mul(scaling, sym)?)?;

    let lambda_max = tape.clamp_min(tape.sym_eig_max(laplacian)?, 1e-6)?;
    let lambda_max_value = tape.scalar_value(lambda_max);
    let two_over_lambda = tape.scale(tape.recip(lambda_max)?, 2.0)?;
    let eye2 = tape.leaf(Array2::eye(n));
    let rescaled = tape.sub(tape.mul(laplacian, two_over_lambda)?, eye2)?;

    Ok(LaplacianBundle {
        laplacian,
        rescaled,
        lambda_max,
        lambda_max_value,
    })
}

/// Top two eigenvalues of a symmetric positive semidefinite matrix,
/// via converged power iteration plus one deflation step. The relative
/// gap `(l1 - l2) / l1` tells whether the dominant eigenpair — and with
/// it the eigenvalue's gradient — is well conditioned; fragmented
/// graphs with near-tied component spectra are not.
pub fn top_two_eigenvalues(m: &Array2<f64>) -> (f64, f64) {
    let (l1, v1) = crate::autodiff::dominant_eigenpair(m);
    let n = m.dim().0;
    let deflated =
        m - &Array2::from_shape_fn((n, n), |(i, j)| l1 * v1[i] * v1[j]);
    let (l2, _) = crate::autodiff::dominant_eigenpair(&deflated);
    (l1, l2)
}

/// Order-k Chebyshev filter: `sum_i T_i(rescaled) X W_i` with the
/// polynomial recursion applied to the propagated features, so only the
/// running pair of N x H terms is ever materialized. `weights` supplies
/// the k+1 projection matrices, all H x H'.
pub fn chebyshev_apply(
    tape: &Tape,
    bundle: &LaplacianBundle,
    features: Var,
    weights: &[Var],
) -> Result<Var> {
    if weights.is_empty() {
        return Err(Error::dim("chebyshev_apply", "needs at least one weight"));
    }
    let (n, h) = tape.shape(features);
    if tape.shape(bundle.rescaled) != (n, n) {
        return Err(Error::dim(
            "chebyshev_apply",
            format!(
                "operator {:?} vs features {:?}",
                tape.shape(bundle.rescaled),
                tape.shape(features)
            ),
        ));
    }
    let out_width = tape.shape(weights[0]).1;
    for (i, w) in weights.iter().enumerate() {
        if tape.shape(*w) != (h, out_width) {
            return Err(Error::dim(
                "chebyshev_apply",
                format!(
                    "weight {i} has shape {:?}, expected ({h}, {out_width})",
                    tape.shape(*w)
                ),
            ));
        }
    }

    // T_0 X = X.
    let mut out = tape.matmul(features, weights[0])?;
    if weights.len() == 1 {
        return Ok(out);
    }
    // T_1 X = L~ X.
    let mut prev = features;
    let mut curr = tape.matmul(bundle.rescaled, features)?;
    out = tape.add(out, tape.matmul(curr, weights[1])?)?;
    for w in &weights[2..] {
        // T_i X = 2 L~ (T_{i-1} X) - T_{i-2} X.
        let next = tape.sub(tape.scale(tape.matmul(bundle.rescaled, curr)?, 2.0)?, prev)?;
        out = tape.add(out, tape.matmul(next, *w)?)?;
        prev = curr;
        curr = next;
    }
    Ok(out)
}
