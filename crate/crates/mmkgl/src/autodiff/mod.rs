//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node in a
//! Wengert list. Because nodes are appended strictly after their inputs,
//! walking the list backwards visits operations in reverse topological
//! order, which is exactly what adjoint propagation needs. Scalars are
//! 1x1 matrices; vectors are Nx1 or 1xN.
//!
//! A tape is confined to one thread (interior mutability via `RefCell`);
//! distinct tapes on distinct threads are fully independent.
//!
//! ```
//! use mmkgl::autodiff::Tape;
//! use ndarray::arr2;
//!
//! let tape = Tape::new();
//! let w = tape.param(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
//! let loss = tape.sum(tape.mul(w, w).unwrap()).unwrap();
//! tape.backward(loss).unwrap();
//! // d(sum(w*w))/dw = 2w
//! assert_eq!(tape.grad(w).unwrap()[[1, 0]], 6.0);
//! ```

mod ops;

pub mod check;

pub use ops::{EPS_NORM, EPS_PROB};

pub(crate) use ops::dominant_eigenpair;

use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape_id: u64,
}

/// Recorded operation kinds. Each variant stores the input handles and
/// whatever auxiliary data the backward rule needs.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    SoftmaxRow(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Recip(Var),
    /// x^(-1/2) with entries at or below `eps` mapped to 0.
    RsqrtOrZero(Var, f64),
    Clamp(Var, f64, f64),
    ClampMin(Var, f64),
    Transpose(Var),
    Sum(Var),
    RowSums(Var),
    Col(Var, usize),
    Rows(Var, usize, usize),
    Entry(Var, usize, usize),
    ConcatCols(Vec<Var>),
    /// Rows rescaled to unit norm; stores the clamped norms (0 marks a
    /// degenerate row that was left at zero).
    RowUnit(Var, Vec<f64>),
    /// Clamp to [-1, 1] (float-noise guard) and pin the diagonal to 1.
    FinishCosine(Var),
    MaskNegInf(Var, Array2<bool>),
    /// Row-wise Kronecker product: out[i, a*q+b] = lhs[i,a] * rhs[i,b].
    RowKron(Var, Var),
    /// Dominant eigenvalue of a symmetric matrix; stores the unit
    /// eigenvector, whose outer product is the exact adjoint.
    SymEigMax(Var, Vec<f64>),
}

pub(crate) struct Node {
    pub value: Array2<f64>,
    pub grad: Option<Array2<f64>>,
    pub requires_grad: bool,
    /// True when this node can transport gradient to a `requires_grad`
    /// leaf; backward skips everything else.
    pub needs_grad: bool,
    pub op: Op,
}

/// Records a forward computation and propagates adjoints back through it.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    backward_done: Cell<bool>,
    id: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert a constant (non-trainable) value.
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false, false)
    }

    /// Insert a trainable value; [`Tape::backward`] will leave its
    /// gradient on the tape.
    pub fn param(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true, true)
    }

    /// Insert a 1x1 constant.
    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    pub(crate) fn push(
        &self,
        value: Array2<f64>,
        op: Op,
        requires_grad: bool,
        needs_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            needs_grad,
            op,
        });
        Var {
            index: nodes.len() - 1,
            tape_id: self.id,
        }
    }

    pub(crate) fn check_owned(&self, v: Var, op: &'static str) -> Result<()> {
        if v.tape_id != self.id {
            return Err(Error::Contract(format!(
                "{op}: variable belongs to a different tape"
            )));
        }
        Ok(())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let d = nodes[v.index].value.dim();
        (d.0, d.1)
    }

    /// Clone of the stored value.
    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.index].value.clone()
    }

    /// Zero-copy access to the stored value.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.index].value)
    }

    /// Scalar payload of a 1x1 value.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.index].value[[0, 0]]
    }

    /// Gradient left by the last backward pass, if any reached this node.
    pub fn grad(&self, v: Var) -> Option<Array2<f64>> {
        self.nodes.borrow()[v.index].grad.clone()
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.index].needs_grad
    }

    /// Clear gradients and re-arm [`Tape::backward`].
    pub fn reset(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
        self.backward_done.set(false);
    }

    /// Propagate adjoints from a scalar loss to every node that can
    /// reach a trainable leaf. Calling this twice without [`Tape::reset`]
    /// is a contract error, as is a non-scalar loss.
    pub fn backward(&self, loss: Var) -> Result<()> {
        self.check_owned(loss, "backward")?;
        if self.backward_done.get() {
            return Err(Error::Contract(
                "backward called twice without reset".into(),
            ));
        }
        if self.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done.set(true);

        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.index] = Some(Array2::from_elem((1, 1), 1.0));

        // Recording order is a topological order, so the reverse walk is
        // reverse-topological: every node's adjoint is complete before we
        // distribute it to its inputs.
        for idx in (0..n).rev() {
            if grads[idx].is_none() || !nodes[idx].needs_grad {
                continue;
            }
            let g = grads[idx].clone().unwrap();
            propagate(&nodes, idx, &g, &mut grads);
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (node, grad) in nodes.iter_mut().zip(grads.into_iter()) {
            node.grad = grad;
        }
        // An unreached trainable leaf has gradient zero, not "missing".
        for node in nodes.iter_mut() {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    if !nodes[v.index].needs_grad {
        return;
    }
    match &mut grads[v.index] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Sum `g` down to `shape`, undoing any forward broadcast.
fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if shape.0 == 1 && out.dim().0 > 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.dim().1 > 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!(out.dim(), shape);
    out
}

fn propagate(nodes: &[Node], idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
    let value = &nodes[idx].value;
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            if nodes[a.index].needs_grad {
                accumulate(nodes, grads, *a, g.dot(&bv.t()));
            }
            if nodes[b.index].needs_grad {
                accumulate(nodes, grads, *b, av.t().dot(g));
            }
        }
        Op::Add(a, b) => {
            let sa = nodes[a.index].value.dim();
            let sb = nodes[b.index].value.dim();
            accumulate(nodes, grads, *a, reduce_to(g, sa));
            accumulate(nodes, grads, *b, reduce_to(g, sb));
        }
        Op::Sub(a, b) => {
            let sa = nodes[a.index].value.dim();
            let sb = nodes[b.index].value.dim();
            accumulate(nodes, grads, *a, reduce_to(g, sa));
            accumulate(nodes, grads, *b, -reduce_to(g, sb));
        }
        Op::Mul(a, b) => {
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            let out_dim = value.dim();
            if nodes[a.index].needs_grad {
                let bb = bv.broadcast(out_dim).expect("mul broadcast");
                accumulate(nodes, grads, *a, reduce_to(&(g * &bb), av.dim()));
            }
            if nodes[b.index].needs_grad {
                let ab = av.broadcast(out_dim).expect("mul broadcast");
                accumulate(nodes, grads, *b, reduce_to(&(g * &ab), bv.dim()));
            }
        }
        Op::Scale(a, c) => {
            accumulate(nodes, grads, *a, g * *c);
        }
        Op::LeakyRelu(a, slope) => {
            let av = &nodes[a.index].value;
            let mask = av.mapv(|x| if x > 0.0 { 1.0 } else { *slope });
            accumulate(nodes, grads, *a, g * &mask);
        }
        Op::SoftmaxRow(a) => {
            // dx = y * (g - sum(g*y, row)), with masked (zero) entries
            // contributing nothing.
            let y = value;
            let gy = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
            let delta = y * &(g - &gy.broadcast(y.dim()).unwrap());
            accumulate(nodes, grads, *a, delta);
        }
        Op::Log(a) => {
            let av = &nodes[a.index].value;
            accumulate(nodes, grads, *a, g / av);
        }
        Op::Exp(a) => {
            accumulate(nodes, grads, *a, g * value);
        }
        Op::Sqrt(a) => {
            accumulate(nodes, grads, *a, g * &value.mapv(|y| 0.5 / y));
        }
        Op::Recip(a) => {
            let av = &nodes[a.index].value;
            accumulate(nodes, grads, *a, g * &av.mapv(|x| -1.0 / (x * x)));
        }
        Op::RsqrtOrZero(a, eps) => {
            let av = &nodes[a.index].value;
            let d = av.mapv(|x| if x <= *eps { 0.0 } else { -0.5 * x.powf(-1.5) });
            accumulate(nodes, grads, *a, g * &d);
        }
        Op::Clamp(a, lo, hi) => {
            let av = &nodes[a.index].value;
            let pass = av.mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
            accumulate(nodes, grads, *a, g * &pass);
        }
        Op::ClampMin(a, lo) => {
            let av = &nodes[a.index].value;
            let pass = av.mapv(|x| if x > *lo { 1.0 } else { 0.0 });
            accumulate(nodes, grads, *a, g * &pass);
        }
        Op::Transpose(a) => {
            accumulate(nodes, grads, *a, g.t().to_owned());
        }
        Op::Sum(a) => {
            let dim = nodes[a.index].value.dim();
            accumulate(nodes, grads, *a, Array2::from_elem(dim, g[[0, 0]]));
        }
        Op::RowSums(a) => {
            let dim = nodes[a.index].value.dim();
            accumulate(nodes, grads, *a, g.broadcast(dim).unwrap().to_owned());
        }
        Op::Col(a, j) => {
            let dim = nodes[a.index].value.dim();
            let mut delta = Array2::zeros(dim);
            delta.column_mut(*j).assign(&g.column(0));
            accumulate(nodes, grads, *a, delta);
        }
        Op::Rows(a, r0, _r1) => {
            let dim = nodes[a.index].value.dim();
            let mut delta = Array2::zeros(dim);
            for (i, row) in g.rows().into_iter().enumerate() {
                delta.row_mut(r0 + i).assign(&row);
            }
            accumulate(nodes, grads, *a, delta);
        }
        Op::Entry(a, i, j) => {
            let dim = nodes[a.index].value.dim();
            let mut delta = Array2::zeros(dim);
            delta[[*i, *j]] = g[[0, 0]];
            accumulate(nodes, grads, *a, delta);
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for p in parts {
                let w = nodes[p.index].value.dim().1;
                let delta = g.slice(ndarray::s![.., off..off + w]).to_owned();
                off += w;
                accumulate(nodes, grads, *p, delta);
            }
        }
        Op::RowUnit(a, norms) => {
            // For a nonzero row: z = x/n, dz/dx = (I - z z^T)/n.
            let y = value;
            let mut delta = Array2::zeros(y.dim());
            for i in 0..y.dim().0 {
                let n = norms[i];
                if n == 0.0 {
                    continue;
                }
                let zi = y.row(i);
                let gi = g.row(i);
                let dot: f64 = gi.dot(&zi);
                for j in 0..y.dim().1 {
                    delta[[i, j]] = (gi[j] - dot * zi[j]) / n;
                }
            }
            accumulate(nodes, grads, *a, delta);
        }
        Op::FinishCosine(a) => {
            // The diagonal is pinned to the constant 1; the [-1,1] clamp
            // only strips float noise, so gradient passes through.
            let mut delta = g.clone();
            for i in 0..delta.dim().0.min(delta.dim().1) {
                delta[[i, i]] = 0.0;
            }
            accumulate(nodes, grads, *a, delta);
        }
        Op::MaskNegInf(a, mask) => {
            let mut delta = g.clone();
            for ((i, j), m) in mask.indexed_iter() {
                if !m {
                    delta[[i, j]] = 0.0;
                }
            }
            accumulate(nodes, grads, *a, delta);
        }
        Op::SymEigMax(a, v) => {
            // d(lambda_max)/dL = v v^T for a unit eigenvector v.
            let n = v.len();
            let g0 = g[[0, 0]];
            let delta = Array2::from_shape_fn((n, n), |(i, j)| g0 * v[i] * v[j]);
            accumulate(nodes, grads, *a, delta);
        }
        Op::RowKron(a, b) => {
            let av = &nodes[a.index].value;
            let bv = &nodes[b.index].value;
            let (m, p) = av.dim();
            let q = bv.dim().1;
            if nodes[a.index].needs_grad {
                let mut da = Array2::zeros((m, p));
                for i in 0..m {
                    for ai in 0..p {
                        let mut s = 0.0;
                        for bi in 0..q {
                            s += g[[i, ai * q + bi]] * bv[[i, bi]];
                        }
                        da[[i, ai]] = s;
                    }
                }
                accumulate(nodes, grads, *a, da);
            }
            if nodes[b.index].needs_grad {
                let mut db = Array2::zeros((m, q));
                for i in 0..m {
                    for bi in 0..q {
                        let mut s = 0.0;
                        for ai in 0..p {
                            s += g[[i, ai * q + bi]] * av[[i, ai]];
                        }
                        db[[i, bi]] = s;
                    }
                }
                accumulate(nodes, grads, *b, db);
            }
        }
    }
}
