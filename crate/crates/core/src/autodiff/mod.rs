//! Reverse-mode differentiation over dense `f64` tensors of rank ≤ 2.
//!
//! A [`Tape`] records every operation in evaluation order, so parents always
//! precede children and a single reverse sweep visits each node once.
//! [`Var`] is a cheap copyable handle into the tape.
//!
//! Broadcasting is limited to a length-1 operand in the elementwise
//! arithmetic ops and to adding a row vector to every row of a matrix
//! ([`Var::add_row`]). Every op checks its output for non-finite values and
//! reports the op name on failure.
//!
//! Gradients accumulate across repeated [`Tape::backward`] calls until
//! [`Tape::zero_grad`] is invoked.

mod gradcheck;
mod tensor;

use std::cell::RefCell;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::{Dims, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalar(Dims),
    #[error("variables belong to different tapes")]
    ForeignTape,
}

type Result<T> = std::result::Result<T, AdError>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Pow(usize, f64),
    PowVar(usize, usize),
    Abs(usize),
    Relu(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Reshape(usize),
    SoftmaxRows(usize),
}

#[derive(Debug)]
struct Node {
    dims: Dims,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Summary of one reverse sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes recorded up to and including the loss.
    pub forward_nodes: usize,
    /// Nodes whose local partials were evaluated.
    pub visited: usize,
}

/// Append-only operation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Vec<f64>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        write!(f, "Var#{}{} {:?}", self.id, node.dims, node.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable input.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push_raw(t.dims(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push_raw(t.dims(), t.data().to_vec(), Op::Const, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.push_raw(Dims::Scalar, vec![x], Op::Const, false)
    }

    pub fn vector(&self, v: &[f64]) -> Var<'_> {
        self.push_raw(Dims::Vector(v.len()), v.to_vec(), Op::Const, false)
    }

    /// Gradient accumulated at `var` (zeros if it never received one).
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let nodes = self.nodes.borrow();
        let dims = nodes[var.id].dims;
        let grads = self.grads.borrow();
        match grads.get(var.id) {
            Some(g) if !g.is_empty() => Tensor::from_dims(dims, g.clone()),
            _ => Tensor::from_dims(dims, vec![0.0; dims.len()]),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Propagates d(loss)/d(node) to every leaf reachable from `loss` and adds
    /// the result to the leaf accumulators.
    pub fn backward(&self, loss: Var<'_>) -> Result<BackwardStats> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AdError::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.dims.len() != 1 {
            return Err(AdError::NonScalar(root.dims));
        }
        let n = loss.id + 1;
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); n];
        g[loss.id] = vec![1.0];
        let mut visited = 0;
        let mut acc_grads = self.grads.borrow_mut();
        if acc_grads.len() < n {
            acc_grads.resize(n, Vec::new());
        }
        for id in (0..n).rev() {
            if g[id].is_empty() {
                continue;
            }
            let gout = std::mem::take(&mut g[id]);
            let node = &nodes[id];
            visited += 1;
            match &node.op {
                Op::Const => {}
                Op::Leaf => {
                    let slot = &mut acc_grads[id];
                    if slot.is_empty() {
                        *slot = gout;
                    } else {
                        slot.iter_mut().zip(&gout).for_each(|(s, x)| *s += x);
                    }
                }
                op => backprop(op, node, &gout, &nodes, &mut g),
            }
        }
        Ok(BackwardStats {
            forward_nodes: n,
            visited,
        })
    }

    fn push_raw(&self, dims: Dims, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            dims,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, dims: Dims, value: Vec<f64>, op: Op) -> Result<Var<'_>> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AdError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents(&op).iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push_raw(dims, value, op, requires_grad))
    }
}

fn parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf | Op::Const => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::AddRow(a, b)
        | Op::MatMul(a, b)
        | Op::PowVar(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Offset(a)
        | Op::Transpose(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Sqrt(a)
        | Op::Pow(a, _)
        | Op::Abs(a)
        | Op::Relu(a)
        | Op::Clamp(a, _, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::Slice(a, _)
        | Op::Reshape(a)
        | Op::SoftmaxRows(a) => vec![*a],
        Op::Concat(ids) => ids.clone(),
    }
}

fn slot<'g>(g: &'g mut [Vec<f64>], id: usize, len: usize) -> &'g mut [f64] {
    if g[id].is_empty() {
        g[id] = vec![0.0; len];
    }
    &mut g[id]
}

fn bidx(len: usize, i: usize) -> usize {
    if len == 1 {
        0
    } else {
        i
    }
}

fn backprop(op: &Op, node: &Node, gout: &[f64], nodes: &[Node], g: &mut [Vec<f64>]) {
    let y = &node.value;
    let needs = |id: usize| nodes[id].requires_grad;
    match *op {
        Op::Leaf | Op::Const => unreachable!(),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(a) {
                let la = nodes[a].value.len();
                let ga = slot(g, a, la);
                for (i, gi) in gout.iter().enumerate() {
                    ga[bidx(la, i)] += gi;
                }
            }
            if needs(b) {
                let lb = nodes[b].value.len();
                let gb = slot(g, b, lb);
                for (i, gi) in gout.iter().enumerate() {
                    gb[bidx(lb, i)] += sign * gi;
                }
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            if needs(a) {
                let ga = slot(g, a, la);
                for (i, gi) in gout.iter().enumerate() {
                    ga[bidx(la, i)] += gi * vb[bidx(lb, i)];
                }
            }
            if needs(b) {
                let gb = slot(g, b, lb);
                for (i, gi) in gout.iter().enumerate() {
                    gb[bidx(lb, i)] += gi * va[bidx(la, i)];
                }
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            if needs(a) {
                let ga = slot(g, a, la);
                for (i, gi) in gout.iter().enumerate() {
                    ga[bidx(la, i)] += gi / vb[bidx(lb, i)];
                }
            }
            if needs(b) {
                let gb = slot(g, b, lb);
                for (i, gi) in gout.iter().enumerate() {
                    let d = vb[bidx(lb, i)];
                    gb[bidx(lb, i)] -= gi * va[bidx(la, i)] / (d * d);
                }
            }
        }
        Op::AddRow(m, v) => {
            let cols = nodes[v].value.len();
            if needs(m) {
                let gm = slot(g, m, gout.len());
                gm.iter_mut().zip(gout).for_each(|(s, x)| *s += x);
            }
            if needs(v) {
                let gv = slot(g, v, cols);
                for row in gout.chunks(cols) {
                    gv.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                }
            }
        }
        Op::Scale(a, k) => {
            if needs(a) {
                let ga = slot(g, a, gout.len());
                ga.iter_mut().zip(gout).for_each(|(s, x)| *s += k * x);
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            if needs(a) {
                let ga = slot(g, a, gout.len());
                ga.iter_mut().zip(gout).for_each(|(s, x)| *s += x);
            }
        }
        Op::MatMul(a, b) => {
            let (ra, ca) = match nodes[a].dims {
                Dims::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            let cb = match nodes[b].dims {
                Dims::Matrix(_, c) => c,
                _ => 1,
            };
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if needs(a) {
                // dA = dY · Bᵀ
                let ga = slot(g, a, ra * ca);
                for i in 0..ra {
                    let gy = &gout[i * cb..(i + 1) * cb];
                    let grow = &mut ga[i * ca..(i + 1) * ca];
                    for (k, gk) in grow.iter_mut().enumerate() {
                        let brow = &vb[k * cb..(k + 1) * cb];
                        *gk += gy.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if needs(b) {
                // dB = Aᵀ · dY
                let gb = slot(g, b, ca * cb);
                for i in 0..ra {
                    let arow = &va[i * ca..(i + 1) * ca];
                    let gy = &gout[i * cb..(i + 1) * cb];
                    for (k, aik) in arow.iter().enumerate() {
                        let grow = &mut gb[k * cb..(k + 1) * cb];
                        grow.iter_mut().zip(gy).for_each(|(s, x)| *s += aik * x);
                    }
                }
            }
        }
        Op::Transpose(a) => {
            if needs(a) {
                let (r, c) = match nodes[a].dims {
                    Dims::Matrix(r, c) => (r, c),
                    _ => unreachable!(),
                };
                let ga = slot(g, a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += gout[j * r + i];
                    }
                }
            }
        }
        Op::Tanh(a) => unary(g, a, nodes, gout, |_, y| 1.0 - y * y, y),
        Op::Sigmoid(a) => unary(g, a, nodes, gout, |_, y| y * (1.0 - y), y),
        Op::Exp(a) => unary(g, a, nodes, gout, |_, y| y, y),
        Op::Ln(a) => unary(g, a, nodes, gout, |x, _| 1.0 / x, y),
        Op::Sqrt(a) => unary(g, a, nodes, gout, |_, y| 0.5 / y, y),
        Op::Pow(a, p) => unary(g, a, nodes, gout, |x, _| p * x.powf(p - 1.0), y),
        Op::Abs(a) => unary(g, a, nodes, gout, |x, _| x.signum() * f64::from(x != 0.0), y),
        Op::Relu(a) => unary(g, a, nodes, gout, |x, _| f64::from(x > 0.0), y),
        Op::Clamp(a, lo, hi) => unary(
            g,
            a,
            nodes,
            gout,
            |x, _| f64::from(x >= lo && x <= hi),
            y,
        ),
        Op::PowVar(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (la, lb) = (va.len(), vb.len());
            if needs(a) {
                let ga = slot(g, a, la);
                for (i, gi) in gout.iter().enumerate() {
                    let (x, p) = (va[bidx(la, i)], vb[bidx(lb, i)]);
                    ga[bidx(la, i)] += gi * p * x.powf(p - 1.0);
                }
            }
            if needs(b) {
                let gb = slot(g, b, lb);
                for (i, gi) in gout.iter().enumerate() {
                    gb[bidx(lb, i)] += gi * y[i] * va[bidx(la, i)].ln();
                }
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if needs(a) {
                let la = nodes[a].value.len();
                let k = if matches!(op, Op::Mean(_)) {
                    gout[0] / la as f64
                } else {
                    gout[0]
                };
                slot(g, a, la).iter_mut().for_each(|s| *s += k);
            }
        }
        Op::Concat(ref ids) => {
            let mut offset = 0;
            for &p in ids {
                let lp = nodes[p].value.len();
                if needs(p) {
                    let gp = slot(g, p, lp);
                    gp.iter_mut()
                        .zip(&gout[offset..offset + lp])
                        .for_each(|(s, x)| *s += x);
                }
                offset += lp;
            }
        }
        Op::Slice(a, start) => {
            if needs(a) {
                let la = nodes[a].value.len();
                let ga = slot(g, a, la);
                ga[start..start + gout.len()]
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(s, x)| *s += x);
            }
        }
        Op::SoftmaxRows(a) => {
            if needs(a) {
                let cols = match node.dims {
                    Dims::Matrix(_, c) => c,
                    d => d.len(),
                };
                let ga = slot(g, a, y.len());
                for ((grow, yrow), gy) in ga
                    .chunks_mut(cols)
                    .zip(y.chunks(cols))
                    .zip(gout.chunks(cols))
                {
                    let dot: f64 = yrow.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for ((s, yj), gj) in grow.iter_mut().zip(yrow).zip(gy) {
                        *s += yj * (gj - dot);
                    }
                }
            }
        }
    }
}

fn unary(
    g: &mut [Vec<f64>],
    a: usize,
    nodes: &[Node],
    gout: &[f64],
    local: impl Fn(f64, f64) -> f64,
    y: &[f64],
) {
    if !nodes[a].requires_grad {
        return;
    }
    let x = &nodes[a].value;
    let ga = slot(g, a, x.len());
    for i in 0..x.len() {
        ga[i] += gout[i] * local(x[i], y[i]);
    }
}

fn broadcast(op: &'static str, a: Dims, b: Dims) -> Result<Dims> {
    if a == b || b.len() == 1 {
        Ok(a)
    } else if a.len() == 1 {
        Ok(b)
    } else {
        Err(AdError::Shape {
            op,
            detail: format!("{a} vs {b}"),
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn dims(&self) -> Dims {
        self.tape.nodes.borrow()[self.id].dims
    }

    pub fn len(&self) -> usize {
        self.dims().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::from_dims(n.dims, n.value.clone())
    }

    /// First (or only) element.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Copy of this value as a constant: no gradient flows back through it.
    pub fn detach(&self) -> Var<'t> {
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].dims, nodes[self.id].value.clone())
        };
        self.tape.push_raw(dims, value, Op::Const, false)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(AdError::ForeignTape)
        }
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let dims = broadcast(name, a.dims, b.dims)?;
            let (la, lb) = (a.value.len(), b.value.len());
            let value = (0..dims.len())
                .map(|i| f(a.value[bidx(la, i)], b.value[bidx(lb, i)]))
                .collect();
            (dims, value)
        };
        self.tape.push(name, dims, value, op)
    }

    fn map(&self, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.dims, a.value.iter().map(|&x| f(x)).collect())
        };
        self.tape.push(name, dims, value, op)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    /// `self^exponent` with a differentiable exponent; requires `self > 0`.
    pub fn pow_var(&self, exponent: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            exponent,
            "pow_var",
            |a, b| if a > 0.0 { a.powf(b) } else { f64::NAN },
            Op::PowVar(self.id, exponent.id),
        )
    }

    /// Adds the vector `row` to every row of the matrix `self`.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let (m, v) = (&nodes[self.id], &nodes[row.id]);
            let cols = match (m.dims, v.dims) {
                (Dims::Matrix(_, c), Dims::Vector(n)) if c == n => c,
                (a, b) => {
                    return Err(AdError::Shape {
                        op: "add_row",
                        detail: format!("{a} + row {b}"),
                    })
                }
            };
            let value = m
                .value
                .chunks(cols)
                .flat_map(|r| r.iter().zip(&v.value).map(|(x, y)| x + y))
                .collect();
            (m.dims, value)
        };
        self.tape.push("add_row", dims, value, Op::AddRow(self.id, row.id))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Result<Var<'t>> {
        self.map("scale", |x| k * x, Op::Scale(self.id, k))
    }

    /// Adds a plain constant to every element.
    pub fn offset(&self, k: f64) -> Result<Var<'t>> {
        self.map("offset", |x| x + k, Op::Offset(self.id))
    }

    /// Matrix × vector or matrix × matrix product.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (ra, ca, cb, out) = match (a.dims, b.dims) {
                (Dims::Matrix(r, c), Dims::Vector(k)) if c == k => (r, c, 1, Dims::Vector(r)),
                (Dims::Matrix(r, c), Dims::Matrix(k, n)) if c == k => (r, c, n, Dims::Matrix(r, n)),
                (da, db) => {
                    return Err(AdError::Shape {
                        op: "matmul",
                        detail: format!("{da} x {db}"),
                    })
                }
            };
            let mut value = vec![0.0; ra * cb];
            for i in 0..ra {
                let arow = &a.value[i * ca..(i + 1) * ca];
                let orow = &mut value[i * cb..(i + 1) * cb];
                if cb == 1 {
                    orow[0] = arow.iter().zip(&b.value).map(|(x, y)| x * y).sum();
                } else {
                    for (k, aik) in arow.iter().enumerate() {
                        let brow = &b.value[k * cb..(k + 1) * cb];
                        orow.iter_mut().zip(brow).for_each(|(o, bkj)| *o += aik * bkj);
                    }
                }
            }
            (out, value)
        };
        self.tape.push("matmul", dims, value, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let Dims::Matrix(r, c) = a.dims else {
                return Err(AdError::Shape {
                    op: "transpose",
                    detail: format!("expected matrix, got {}", a.dims),
                });
            };
            let mut value = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    value[j * r + i] = a.value[i * c + j];
                }
            }
            (Dims::Matrix(c, r), value)
        };
        self.tape.push("transpose", dims, value, Op::Transpose(self.id))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.map("tanh", f64::tanh, Op::Tanh(self.id))
    }

    /// Logistic function, evaluated on the branch that avoids overflow.
    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.map("sigmoid", stable_sigmoid, Op::Sigmoid(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.map("exp", f64::exp, Op::Exp(self.id))
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        self.map(
            "ln",
            |x| if x > 0.0 { x.ln() } else { f64::NAN },
            Op::Ln(self.id),
        )
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.map(
            "sqrt",
            |x| if x > 0.0 { x.sqrt() } else { f64::NAN },
            Op::Sqrt(self.id),
        )
    }

    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        self.map("pow", |x| x.powf(p), Op::Pow(self.id, p))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.map("abs", f64::abs, Op::Abs(self.id))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.map("relu", |x| x.max(0.0), Op::Relu(self.id))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the range.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.map("clamp", |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    pub fn floor_at(&self, lo: f64) -> Result<Var<'t>> {
        self.clamp(lo, f64::INFINITY)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let v = self.tape.nodes.borrow()[self.id].value.iter().sum();
        self.tape.push("sum", Dims::Scalar, vec![v], Op::Sum(self.id))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.is_empty() {
                return Err(AdError::Shape {
                    op: "mean",
                    detail: "empty tensor".into(),
                });
            }
            x.iter().sum::<f64>() / x.len() as f64
        };
        self.tape.push("mean", Dims::Scalar, vec![v], Op::Mean(self.id))
    }

    /// Contiguous elements `[start, start + len)` of the flattened value.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if start + len > a.value.len() {
                return Err(AdError::Shape {
                    op: "slice",
                    detail: format!("[{start}, {}) out of {}", start + len, a.dims),
                });
            }
            a.value[start..start + len].to_vec()
        };
        self.tape
            .push("slice", Dims::Vector(len), value, Op::Slice(self.id, start))
    }

    pub fn index(&self, i: usize) -> Result<Var<'t>> {
        let v = self.slice(i, 1)?;
        v.reshape(Dims::Scalar)
    }

    pub fn row(&self, i: usize) -> Result<Var<'t>> {
        match self.dims() {
            Dims::Matrix(_, c) => self.slice(i * c, c),
            d => Err(AdError::Shape {
                op: "row",
                detail: format!("expected matrix, got {d}"),
            }),
        }
    }

    pub fn reshape(&self, dims: Dims) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.dims.len() != dims.len() {
                return Err(AdError::Shape {
                    op: "reshape",
                    detail: format!("{} -> {dims}", a.dims),
                });
            }
            a.value.clone()
        };
        self.tape.push("reshape", dims, value, Op::Reshape(self.id))
    }

    /// Row-wise softmax of a matrix (or of a vector treated as one row).
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let (dims, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let cols = match a.dims {
                Dims::Matrix(_, c) => c,
                d => d.len(),
            };
            let mut value = Vec::with_capacity(a.value.len());
            for row in a.value.chunks(cols) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                value.extend(e.into_iter().map(|x| x / z));
            }
            (a.dims, value)
        };
        self.tape
            .push("softmax_rows", dims, value, Op::SoftmaxRows(self.id))
    }
}

/// Concatenates scalars and vectors into one vector.
pub fn concat<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return Err(AdError::Shape {
            op: "concat",
            detail: "no inputs".into(),
        });
    };
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let mut value = Vec::new();
        for p in parts {
            p.same_tape(first)?;
            let n = &nodes[p.id];
            if let Dims::Matrix(..) = n.dims {
                return Err(AdError::Shape {
                    op: "concat",
                    detail: format!("matrix operand {}", n.dims),
                });
            }
            value.extend_from_slice(&n.value);
        }
        value
    };
    let ids = parts.iter().map(|p| p.id).collect();
    tape.push("concat", Dims::Vector(value.len()), value, Op::Concat(ids))
}

/// Stacks equal-length vectors as the rows of a matrix.
pub fn stack_rows<'t>(rows: &[Var<'t>]) -> Result<Var<'t>> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(AdError::Shape {
            op: "stack_rows",
            detail: format!("row of length {} among rows of length {cols}", bad.len()),
        });
    }
    concat(rows)?.reshape(Dims::Matrix(rows.len(), cols))
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), 6.0);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, -2.0, 5.0, 0.5]));
        let m = x.mean().unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.25; 4]);
    }

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let tape = Tape::new();
        let p = tape.leaf(&Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let loss = p.sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).data(), &[1.0; 6]);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let tape = Tape::new();
        let a = tape.leaf(&Tensor::scalar(2.0));
        let b = tape.leaf(&Tensor::scalar(5.0));
        let loss = a.mul(b.detach()).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).item(), 5.0);
        assert_eq!(tape.grad(b).item(), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.5));
        let y = x.powf(3.0).unwrap();
        tape.backward(y).unwrap();
        let once = tape.grad(x).item();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), 2.0 * once);
        tape.zero_grad();
        assert_eq!(tape.grad(x).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AdError::NonScalar(Dims::Vector(2)))));
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let tape = Tape::new();
        let a = tape.vector(&[1.0, 2.0]);
        let b = tape.vector(&[1.0, 2.0, 3.0]);
        let err = a.add(b).unwrap_err();
        assert_eq!(err.to_string(), "shape error in add: [2] vs [3]");
        let m = tape.constant(&Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        assert!(m.matmul(b).is_err());
    }

    #[test]
    fn division_by_zero_is_reported() {
        let tape = Tape::new();
        let a = tape.scalar(1.0);
        let z = tape.scalar(0.0);
        assert_eq!(a.div(z).unwrap_err(), AdError::NonFinite { op: "div" });
        assert_eq!(z.sqrt().unwrap_err(), AdError::NonFinite { op: "sqrt" });
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(stable_sigmoid(-800.0), 0.0);
        assert_eq!(stable_sigmoid(800.0), 1.0);
        assert_eq!(stable_sigmoid(0.0), 0.5);
    }

    #[test]
    fn scalar_broadcast() {
        let tape = Tape::new();
        let v = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = tape.leaf(&Tensor::scalar(10.0));
        let out = v.add(s).unwrap().mul(s).unwrap().sum().unwrap();
        assert_eq!(out.item(), 10.0 * 36.0);
        tape.backward(out).unwrap();
        assert_eq!(tape.grad(v).data(), &[10.0; 3]);
        // d/ds sum((v+s)s) = sum(v + 2s) = 6 + 60
        assert_eq!(tape.grad(s).item(), 66.0);
    }

    #[test]
    fn backward_visits_each_node_at_most_once() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![0.3, -0.7, 1.1]));
        let mut h = x;
        for _ in 0..10 {
            h = h.tanh().unwrap().mul(x).unwrap();
        }
        let loss = h.sum().unwrap();
        let stats = tape.backward(loss).unwrap();
        assert!(stats.visited <= stats.forward_nodes);
        assert_eq!(stats.forward_nodes, tape.len());
    }
}
