//! Forward computation and recording for every tape operation.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probabilities are clamped to `[EPS_PROB, 1 - EPS_PROB]` before a log.
pub const EPS_PROB: f64 = 1e-12;

/// Row norms at or below this are treated as exactly zero.
pub const EPS_NORM: f64 = 1e-12;

/// Iteration cap for the dominant-eigenvalue power method.
pub const POWER_ITER_CAP: usize = 2000;

/// Relative stagnation tolerance that ends the power method. Tight
/// enough that the result no longer depends on the start vector at any
/// scale the rest of the pipeline can see.
pub const POWER_ITER_TOL: f64 = 1e-15;

const POWER_ITER_SEED: u64 = 0x7067_6d6d_6b67_6c31;

/// Converged power iteration on a symmetric PSD matrix. Returns the
/// Rayleigh-quotient estimate of the largest eigenvalue and its unit
/// eigenvector. A matrix that annihilates the iterate (e.g. the zero
/// matrix) reports eigenvalue 0.
pub(crate) fn dominant_eigenpair(m: &Array2<f64>) -> (f64, Array1<f64>) {
    let n = m.dim().0;
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITER_SEED);
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);

    let mut lambda = 0.0;
    for iter in 0..POWER_ITER_CAP {
        let w = m.dot(&v);
        let lambda_new = v.dot(&w);
        let wnorm = w.dot(&w).sqrt();
        if wnorm == 0.0 {
            return (0.0, v);
        }
        v = w.mapv(|x| x / wnorm);
        if iter >= 1 && (lambda_new - lambda).abs() <= POWER_ITER_TOL * lambda_new.abs().max(1.0)
        {
            return (lambda_new, v);
        }
        lambda = lambda_new;
    }
    (lambda, v)
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let rows = if a.0 == b.0 {
        a.0
    } else if a.0 == 1 {
        b.0
    } else if b.0 == 1 {
        a.0
    } else {
        return Err(Error::dim(op, format!("cannot broadcast {a:?} with {b:?}")));
    };
    let cols = if a.1 == b.1 {
        a.1
    } else if a.1 == 1 {
        b.1
    } else if b.1 == 1 {
        a.1
    } else {
        return Err(Error::dim(op, format!("cannot broadcast {a:?} with {b:?}")));
    };
    Ok((rows, cols))
}

impl Tape {
    fn binary_elementwise(
        &self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check_owned(a, op_name)?;
        self.check_owned(b, op_name)?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            let shape = broadcast_shape(op_name, av.dim(), bv.dim())?;
            let ab = av.broadcast(shape).unwrap();
            let bb = bv.broadcast(shape).unwrap();
            let mut out = Array2::zeros(shape);
            ndarray::Zip::from(&mut out)
                .and(&ab)
                .and(&bb)
                .for_each(|o, &x, &y| *o = f(x, y));
            (out, nodes[a.index].needs_grad || nodes[b.index].needs_grad)
        };
        Ok(self.push(value, op, false, needs))
    }

    fn unary(
        &self,
        op_name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check_owned(a, op_name)?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            (av.mapv(&f), nodes[a.index].needs_grad)
        };
        Ok(self.push(value, op, false, needs))
    }

    /// Standard matrix product.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_owned(a, "matmul")?;
        self.check_owned(b, "matmul")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            if av.dim().1 != bv.dim().0 {
                return Err(Error::dim(
                    "matmul",
                    format!("{:?} x {:?}", av.dim(), bv.dim()),
                ));
            }
            (
                av.dot(bv),
                nodes[a.index].needs_grad || nodes[b.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::Matmul(a, b), false, needs))
    }

    /// Elementwise sum with row/column-vector broadcasting.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product with row/column-vector broadcasting.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    /// Row-wise softmax. `-inf` entries (from [`Tape::mask_neg_inf`])
    /// come out as exact zeros; a row of only `-inf` is a domain error.
    pub fn softmax_row(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "softmax_row")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let mut out = Array2::zeros(av.dim());
            for (i, row) in av.rows().into_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                if !max.is_finite() {
                    return Err(Error::domain(
                        "softmax_row",
                        format!("row {i} has no finite entry"),
                    ));
                }
                let mut sum = 0.0;
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - max).exp();
                    out[[i, j]] = e;
                    sum += e;
                }
                for j in 0..row.len() {
                    out[[i, j]] /= sum;
                }
            }
            (out, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::SoftmaxRow(a), false, needs))
    }

    /// Natural log; any entry `<= 0` is a domain error, so callers clamp
    /// probabilities with [`Tape::clamp`] first.
    pub fn log(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "log")?;
        let bad = self.with_value(a, |v| v.iter().any(|&x| x <= 0.0));
        if bad {
            return Err(Error::domain("log", "non-positive entry"));
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "sqrt")?;
        let bad = self.with_value(a, |v| v.iter().any(|&x| x < 0.0));
        if bad {
            return Err(Error::domain("sqrt", "negative entry"));
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn recip(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "recip")?;
        let bad = self.with_value(a, |v| v.iter().any(|&x| x == 0.0));
        if bad {
            return Err(Error::domain("recip", "zero entry"));
        }
        self.unary("recip", a, |x| 1.0 / x, Op::Recip(a))
    }

    /// `x^(-1/2)` with entries at or below `eps` mapped to 0 (the
    /// zero-degree convention for normalized Laplacians).
    pub fn rsqrt_or_zero(&self, a: Var, eps: f64) -> Result<Var> {
        self.unary(
            "rsqrt_or_zero",
            a,
            |x| if x <= eps { 0.0 } else { 1.0 / x.sqrt() },
            Op::RsqrtOrZero(a, eps),
        )
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary("clamp", a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn clamp_min(&self, a: Var, lo: f64) -> Result<Var> {
        self.unary("clamp_min", a, |x| x.max(lo), Op::ClampMin(a, lo))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "transpose")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            (
                nodes[a.index].value.t().to_owned(),
                nodes[a.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::Transpose(a), false, needs))
    }

    /// Full reduction to a 1x1 scalar.
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "sum")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            (
                Array2::from_elem((1, 1), nodes[a.index].value.sum()),
                nodes[a.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::Sum(a), false, needs))
    }

    /// Per-row sums as an Nx1 column.
    pub fn row_sums(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "row_sums")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let v = nodes[a.index].value.sum_axis(Axis(1)).insert_axis(Axis(1));
            (v, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::RowSums(a), false, needs))
    }

    /// Single column as an Nx1 matrix.
    pub fn col(&self, a: Var, j: usize) -> Result<Var> {
        self.check_owned(a, "col")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            if j >= av.dim().1 {
                return Err(Error::dim("col", format!("column {j} of {:?}", av.dim())));
            }
            let v = av.column(j).to_owned().insert_axis(Axis(1));
            (v, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::Col(a, j), false, needs))
    }

    /// Row slice `[r0, r1)`.
    pub fn rows(&self, a: Var, r0: usize, r1: usize) -> Result<Var> {
        self.check_owned(a, "rows")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            if r0 >= r1 || r1 > av.dim().0 {
                return Err(Error::dim(
                    "rows",
                    format!("rows {r0}..{r1} of {:?}", av.dim()),
                ));
            }
            let v = av.slice(ndarray::s![r0..r1, ..]).to_owned();
            (v, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::Rows(a, r0, r1), false, needs))
    }

    /// Single entry as a 1x1 scalar.
    pub fn entry(&self, a: Var, i: usize, j: usize) -> Result<Var> {
        self.check_owned(a, "entry")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            if i >= av.dim().0 || j >= av.dim().1 {
                return Err(Error::dim(
                    "entry",
                    format!("entry ({i},{j}) of {:?}", av.dim()),
                ));
            }
            (
                Array2::from_elem((1, 1), av[[i, j]]),
                nodes[a.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::Entry(a, i, j), false, needs))
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        for p in parts {
            self.check_owned(*p, "concat_cols")?;
        }
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].index].value.dim().0;
            let mut needs = false;
            let mut width = 0;
            for p in parts {
                let d = nodes[p.index].value.dim();
                if d.0 != rows {
                    return Err(Error::dim("concat_cols", format!("row mismatch {d:?}")));
                }
                width += d.1;
                needs |= nodes[p.index].needs_grad;
            }
            let mut out = Array2::zeros((rows, width));
            let mut off = 0;
            for p in parts {
                let v = &nodes[p.index].value;
                out.slice_mut(ndarray::s![.., off..off + v.dim().1]).assign(v);
                off += v.dim().1;
            }
            (out, needs)
        };
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), false, needs))
    }

    /// Rescale each row to unit L2 norm. Rows with norm at or below
    /// [`EPS_NORM`] stay zero and pass no gradient; the second return is
    /// how many such degenerate rows were seen.
    pub fn row_unit(&self, a: Var) -> Result<(Var, usize)> {
        self.check_owned(a, "row_unit")?;
        let (value, norms, degenerate, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let mut out = Array2::zeros(av.dim());
            let mut norms = Vec::with_capacity(av.dim().0);
            let mut degenerate = 0;
            for (i, row) in av.rows().into_iter().enumerate() {
                let n = row.dot(&row).sqrt();
                if n <= EPS_NORM {
                    norms.push(0.0);
                    degenerate += 1;
                } else {
                    norms.push(n);
                    for (j, &x) in row.iter().enumerate() {
                        out[[i, j]] = x / n;
                    }
                }
            }
            (out, norms, degenerate, nodes[a.index].needs_grad)
        };
        Ok((
            self.push(value, Op::RowUnit(a, norms), false, needs),
            degenerate,
        ))
    }

    /// Final step of a cosine-similarity matrix built from unit rows:
    /// strip float noise outside [-1, 1] and pin the diagonal at 1.
    pub fn finish_cosine(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "finish_cosine")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let mut out = av.mapv(|x| x.clamp(-1.0, 1.0));
            for i in 0..out.dim().0.min(out.dim().1) {
                out[[i, i]] = 1.0;
            }
            (out, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::FinishCosine(a), false, needs))
    }

    /// Keep entries where `mask` is true, replace the rest with `-inf`
    /// so a following [`Tape::softmax_row`] excludes them exactly.
    pub fn mask_neg_inf(&self, a: Var, mask: &Array2<bool>) -> Result<Var> {
        self.check_owned(a, "mask_neg_inf")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            if av.dim() != mask.dim() {
                return Err(Error::dim(
                    "mask_neg_inf",
                    format!("value {:?} vs mask {:?}", av.dim(), mask.dim()),
                ));
            }
            let mut out = av.clone();
            for ((i, j), m) in mask.indexed_iter() {
                if !m {
                    out[[i, j]] = f64::NEG_INFINITY;
                }
            }
            (out, nodes[a.index].needs_grad)
        };
        Ok(self.push(value, Op::MaskNegInf(a, mask.clone()), false, needs))
    }

    /// Largest eigenvalue of a symmetric matrix as a differentiable 1x1
    /// scalar. The forward pass runs the power method to stagnation; the
    /// backward rule is the exact eigenvalue perturbation `v v^T`.
    pub fn sym_eig_max(&self, a: Var) -> Result<Var> {
        self.check_owned(a, "sym_eig_max")?;
        let (value, v, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            if av.dim().0 != av.dim().1 {
                return Err(Error::dim(
                    "sym_eig_max",
                    format!("matrix must be square, got {:?}", av.dim()),
                ));
            }
            let (lambda, v) = dominant_eigenpair(av);
            (
                Array2::from_elem((1, 1), lambda),
                v.to_vec(),
                nodes[a.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::SymEigMax(a, v), false, needs))
    }

    /// Row-wise Kronecker product: `out[i, a*q+b] = lhs[i,a] * rhs[i,b]`.
    /// Folding branch outputs through this builds the flattened
    /// cross-kernel tensor with the first factor as the slowest axis.
    pub fn row_kron(&self, a: Var, b: Var) -> Result<Var> {
        self.check_owned(a, "row_kron")?;
        self.check_owned(b, "row_kron")?;
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            if av.dim().0 != bv.dim().0 {
                return Err(Error::dim(
                    "row_kron",
                    format!("{:?} vs {:?}", av.dim(), bv.dim()),
                ));
            }
            let (m, p) = av.dim();
            let q = bv.dim().1;
            let mut out = Array2::zeros((m, p * q));
            for i in 0..m {
                for ai in 0..p {
                    for bi in 0..q {
                        out[[i, ai * q + bi]] = av[[i, ai]] * bv[[i, bi]];
                    }
                }
            }
            (
                out,
                nodes[a.index].needs_grad || nodes[b.index].needs_grad,
            )
        };
        Ok(self.push(value, Op::RowKron(a, b), false, needs))
    }
}
