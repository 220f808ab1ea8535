//! Central finite-difference gradient checking.
//!
//! These helpers evaluate a scalar-valued builder twice per perturbed
//! coordinate and never touch the analytic backward path, so they stay
//! an independent oracle for it.

use super::{Tape, Var};
use crate::error::Result;
use ndarray::Array2;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor, so that near-zero gradients are judged
/// on an absolute scale where finite-difference noise dominates.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Evaluate `build` as a plain function of the inputs (fresh tape, no
/// gradients retained).
pub fn eval_scalar(
    build: &impl Fn(&Tape, &[Var]) -> Result<Var>,
    inputs: &[Array2<f64>],
) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&tape, &vars)?;
    Ok(tape.scalar_value(out))
}

/// Analytic gradients of `build` with respect to every input.
pub fn analytic_grads(
    build: &impl Fn(&Tape, &[Var]) -> Result<Var>,
    inputs: &[Array2<f64>],
) -> Result<Vec<Array2<f64>>> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = build(&tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|v| tape.grad(*v).unwrap()).collect())
}

/// Central finite difference for one coordinate of one input.
pub fn finite_diff(
    build: &impl Fn(&Tape, &[Var]) -> Result<Var>,
    inputs: &[Array2<f64>],
    which: usize,
    coord: (usize, usize),
    h: f64,
) -> Result<f64> {
    let mut plus = inputs.to_vec();
    plus[which][coord] += h;
    let mut minus = inputs.to_vec();
    minus[which][coord] -= h;
    Ok((eval_scalar(build, &plus)? - eval_scalar(build, &minus)?) / (2.0 * h))
}

/// Compare analytic and finite-difference gradients over every
/// coordinate of every input; returns the worst relative error.
pub fn max_rel_err(
    build: &impl Fn(&Tape, &[Var]) -> Result<Var>,
    inputs: &[Array2<f64>],
    h: f64,
) -> Result<f64> {
    let grads = analytic_grads(build, inputs)?;
    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.dim().0 {
            for j in 0..input.dim().1 {
                let fd = finite_diff(build, inputs, which, (i, j), h)?;
                worst = worst.max(rel_err(grads[which][[i, j]], fd));
            }
        }
    }
    Ok(worst)
}
