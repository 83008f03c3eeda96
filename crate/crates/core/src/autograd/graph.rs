//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Parents
//! always precede children, so the tape order is already a topological order
//! and `backward` is a single reverse sweep.
//!
//! Gradients accumulate: calling [`Graph::backward`] twice on the same loss
//! without [`Graph::zero_grad`] leaves exactly twice the gradient in every
//! reachable leaf.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    /// `rhs_scalar` marks a single-element right operand broadcast over lhs.
    Binary {
        op: BinaryOp,
        lhs: Var,
        rhs: Var,
        rhs_scalar: bool,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Activation(Activation, Var),
    Softmax(Var),
    Ln(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Concat {
        lhs: Var,
        rhs: Var,
    },
    Row {
        x: Var,
        index: usize,
    },
    Select {
        x: Var,
        index: usize,
    },
    StackRows(Vec<Var>),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient, `None` if `v` was never reached by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like the value; zeros when unreached.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())
                .expect("grad shape tracks value shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += x * bv[p * n + j];
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `W x` for `W: [m×k]`, `x: [k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(Error::dim("matvec", sw, sx));
        }
        let (m, k) = (sw[0], sw[1]);
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let out = (0..m)
            .map(|i| {
                wv[i * k..(i + 1) * k]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let rg = self.needs(w) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), rg))
    }

    pub fn elementwise(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let rhs_scalar = if sa == sb {
            false
        } else if self.value(b).numel() == 1 {
            true
        } else {
            return Err(Error::dim("elementwise", sa, sb));
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let data = if rhs_scalar {
            av.data().iter().map(|&x| f(x, bv[0])).collect()
        } else {
            av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            value,
            Op::Binary {
                op,
                lhs: a,
                rhs: b,
                rhs_scalar,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.needs(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let value = match kind {
            Activation::Sigmoid => self.value(x).map(sigmoid),
            Activation::Tanh => self.value(x).map(f64::tanh),
            Activation::Relu => self.value(x).map(|v| v.max(0.0)),
        };
        let rg = self.needs(x);
        self.push(value, Op::Activation(kind, x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    /// Softmax over a non-empty vector, stabilized by subtracting the max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.numel() == 0 {
            return Err(Error::Contract(format!(
                "softmax expects a non-empty vector, got shape {:?}",
                xv.shape()
            )));
        }
        let value = Tensor::vector(softmax(xv.data()));
        let rg = self.needs(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let rg = self.needs(x);
        self.push(value, Op::Ln(x), rg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.needs(x);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Joins two vectors end to end, or two matrices with equal row counts
    /// side by side.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match (ta.rank(), tb.rank()) {
            (1, 1) => {
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::vector(data)
            }
            (2, 2) if ta.rows() == tb.rows() => {
                let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
                let mut data = Vec::with_capacity(rows * (ca + cb));
                for r in 0..rows {
                    data.extend_from_slice(ta.row(r));
                    data.extend_from_slice(tb.row(r));
                }
                Tensor::new(vec![rows, ca + cb], data)?
            }
            _ => return Err(Error::dim("concat", ta.shape(), tb.shape())),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat { lhs: a, rhs: b }, rg))
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || index >= xv.rows() {
            return Err(Error::Contract(format!(
                "row {index} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let value = Tensor::vector(xv.row(index).to_vec());
        let rg = self.needs(x);
        Ok(self.push(value, Op::Row { x, index }, rg))
    }

    /// Element `index` of a vector as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || index >= xv.numel() {
            return Err(Error::Contract(format!(
                "element {index} out of range for shape {:?}",
                xv.shape()
            )));
        }
        let value = Tensor::scalar(xv.data()[index]);
        let rg = self.needs(x);
        Ok(self.push(value, Op::Select { x, index }, rg))
    }

    /// Stacks equal-length vectors into a `[rows.len() × len]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Contract("stack_rows needs at least one row".into()))?;
        let width = self.value(*first).numel();
        let mut data = Vec::with_capacity(rows.len() * width);
        let mut rg = false;
        for &r in rows {
            let rv = self.value(r);
            if rv.rank() != 1 || rv.numel() != width {
                return Err(Error::dim("stack_rows", &[width], rv.shape()));
            }
            data.extend_from_slice(rv.data());
            rg |= self.needs(r);
        }
        let value = Tensor::new(vec![rows.len(), width], data)?;
        Ok(self.push(value, Op::StackRows(rows.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Reverse sweep from a single-element `loss`, accumulating into the
    /// `grad` of every reachable node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &dy, &mut adj);
            }
            adj[idx] = Some(dy);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if !node.requires_grad {
                continue;
            }
            if let Some(a) = a {
                match &mut node.grad {
                    Some(g) => g.iter_mut().zip(&a).for_each(|(g, d)| *g += d),
                    None => node.grad = Some(a),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                send(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += dy[i * n + j] * bv.data()[p * n + j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                });
                send(*b, &mut |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av.data()[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += x * dy[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::MatVec(w, x) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let k = wv.cols();
                send(*w, &mut |gw| {
                    for (i, d) in dy.iter().enumerate() {
                        for (j, xj) in xv.data().iter().enumerate() {
                            gw[i * k + j] += d * xj;
                        }
                    }
                });
                send(*x, &mut |gx| {
                    for (i, d) in dy.iter().enumerate() {
                        for (j, g) in gx.iter_mut().enumerate() {
                            *g += wv.data()[i * k + j] * d;
                        }
                    }
                });
            }
            Op::Binary {
                op,
                lhs,
                rhs,
                rhs_scalar,
            } => {
                let (av, bv) = (self.value(*lhs).data(), self.value(*rhs).data());
                let b_at = |i: usize| if *rhs_scalar { bv[0] } else { bv[i] };
                send(*lhs, &mut |ga| {
                    for (i, g) in ga.iter_mut().enumerate() {
                        *g += match op {
                            BinaryOp::Add | BinaryOp::Sub => dy[i],
                            BinaryOp::Mul => dy[i] * b_at(i),
                        };
                    }
                });
                send(*rhs, &mut |gb| {
                    for (i, d) in dy.iter().enumerate() {
                        let contrib = match op {
                            BinaryOp::Add => *d,
                            BinaryOp::Sub => -d,
                            BinaryOp::Mul => d * av[i],
                        };
                        if *rhs_scalar {
                            gb[0] += contrib;
                        } else {
                            gb[i] += contrib;
                        }
                    }
                });
            }
            Op::Affine { x, scale } => {
                send(*x, &mut |gx| {
                    gx.iter_mut().zip(dy).for_each(|(g, d)| *g += scale * d);
                });
            }
            Op::Activation(kind, x) => {
                let y = node.value.data();
                let xv = self.value(*x).data();
                send(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        let local = match kind {
                            Activation::Sigmoid => y[i] * (1.0 - y[i]),
                            Activation::Tanh => 1.0 - y[i] * y[i],
                            Activation::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[i] += dy[i] * local;
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                send(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += y[i] * (dy[i] - dot);
                    }
                });
            }
            Op::Ln(x) => {
                let xv = self.value(*x).data();
                send(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += dy[i] / xv[i];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                send(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > *lo && xv[i] < *hi {
                            gx[i] += dy[i];
                        }
                    }
                });
            }
            Op::Concat { lhs, rhs } => {
                let (ta, tb) = (self.value(*lhs), self.value(*rhs));
                let (ca, cb) = (ta.cols(), tb.cols());
                let rows = if ta.rank() == 2 { ta.rows() } else { 1 };
                send(*lhs, &mut |ga| {
                    for r in 0..rows {
                        for j in 0..ca {
                            ga[r * ca + j] += dy[r * (ca + cb) + j];
                        }
                    }
                });
                send(*rhs, &mut |gb| {
                    for r in 0..rows {
                        for j in 0..cb {
                            gb[r * cb + j] += dy[r * (ca + cb) + ca + j];
                        }
                    }
                });
            }
            Op::Row { x, index } => {
                let cols = self.value(*x).cols();
                send(*x, &mut |gx| {
                    for j in 0..cols {
                        gx[index * cols + j] += dy[j];
                    }
                });
            }
            Op::Select { x, index } => {
                send(*x, &mut |gx| gx[*index] += dy[0]);
            }
            Op::StackRows(rows) => {
                let width = node.value.cols();
                for (r, v) in rows.iter().enumerate() {
                    send(*v, &mut |gv| {
                        for j in 0..width {
                            gv[j] += dy[r * width + j];
                        }
                    });
                }
            }
            Op::Sum(x) => {
                send(*x, &mut |gx| gx.iter_mut().for_each(|g| *g += dy[0]));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a non-empty slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
