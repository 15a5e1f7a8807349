//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of a forward pass into a flat node
//! arena; [`Tape::backward`] replays the arena in reverse, applying each
//! node's vector-Jacobian product. The graph is rebuilt from scratch on every
//! forward pass.
//!
//! All node values are rank-2 `[rows, cols]` tensors. Batches are `[B, n]`,
//! single vectors `[1, n]`, per-sample scalars `[B, 1]`, and scalars `[1, 1]`.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `[B,n] + [1,n]` broadcast over rows.
    AddRow(Var, Var),
    /// `[B,n] * [1,n]` broadcast over rows.
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[B,n] / [B,1]` broadcast over columns.
    DivCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    /// Sum of every element, giving `[1,1]`.
    SumAll(Var),
    /// Row sums: `[B,n] -> [B,1]`.
    SumCols(Var),
    /// Column-wise concatenation of same-row-count matrices.
    ConcatCols(Vec<Var>),
    /// Column range `[from, to)`.
    SliceCols(Var, usize, usize),
    /// Row-wise log-softmax.
    LogSoftmaxRows(Var),
    /// `out[i] = x[i, idx[i]]`, giving `[B,1]`.
    SelectCols(Var, Vec<usize>),
    /// Elementwise minimum; ties route the gradient to the first input.
    MinElem(Var, Var),
    /// Clamp to `[lo, hi]`; gradient passes only inside the band.
    Clamp(Var, f64, f64),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

/// The recording arena. Create one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// `[1,1]` constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::matrix(1, 1, vec![v]).expect("scalar"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, n) = (self.value(b).rows(), self.value(b).cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, data).unwrap(), needs)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(self.value(row).rows(), 1);
        assert_eq!(self.value(row).cols(), n);
        let mut data = self.value(a).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), Tensor::matrix(m, n, data).unwrap(), needs)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(self.value(row).rows(), 1);
        assert_eq!(self.value(row).cols(), n);
        let mut data = self.value(a).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= r[j];
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(Op::MulRow(a, row), Tensor::matrix(m, n, data).unwrap(), needs)
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "shape mismatch in {:?}", op);
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(op, Tensor::new(shape, data).unwrap(), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, f64::min, Op::MinElem(a, b))
    }

    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let (m, n) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(self.value(col).rows(), m);
        assert_eq!(self.value(col).cols(), 1);
        let mut data = self.value(a).data().to_vec();
        let s = self.value(col).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] /= s[i];
            }
        }
        let needs = self.needs(a) || self.needs(col);
        self.push(Op::DivCol(a, col), Tensor::matrix(m, n, data).unwrap(), needs)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(op, Tensor::new(shape, data).unwrap(), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddConst(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        // ln(1+e^x) with the large-x branch to avoid overflow
        self.unary(x, |v| if v > 30.0 { v } else { (1.0 + v.exp()).ln() }, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Op::SumAll(x), Tensor::matrix(1, 1, vec![s]).unwrap(), needs)
    }

    /// Mean of every element, giving `[1,1]`.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (m, n) = (self.value(x).rows(), self.value(x).cols());
        let d = self.value(x).data();
        let data: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        let needs = self.needs(x);
        self.push(Op::SumCols(x), Tensor::matrix(m, 1, data).unwrap(), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), m, "concat rows mismatch");
            let n = t.cols();
            for i in 0..m {
                data[i * total + offset..i * total + offset + n]
                    .copy_from_slice(&t.data()[i * n..(i + 1) * n]);
            }
            offset += n;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(m, total, data).unwrap(), needs)
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Var {
        let (m, n) = (self.value(x).rows(), self.value(x).cols());
        assert!(from < to && to <= n, "slice [{from},{to}) out of {n} cols");
        let w = to - from;
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w]
                .copy_from_slice(&self.value(x).data()[i * n + from..i * n + to]);
        }
        let needs = self.needs(x);
        self.push(Op::SliceCols(x, from, to), Tensor::matrix(m, w, data).unwrap(), needs)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (m, n) = (self.value(x).rows(), self.value(x).cols());
        let d = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                data[i * n + j] = row[j] - lse;
            }
        }
        let needs = self.needs(x);
        self.push(Op::LogSoftmaxRows(x), Tensor::matrix(m, n, data).unwrap(), needs)
    }

    pub fn select_cols(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (m, n) = (self.value(x).rows(), self.value(x).cols());
        assert_eq!(idx.len(), m);
        let d = self.value(x).data();
        let data: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "select index {j} out of {n} cols");
                d[i * n + j]
            })
            .collect();
        let needs = self.needs(x);
        self.push(Op::SelectCols(x, idx), Tensor::matrix(m, 1, data).unwrap(), needs)
    }

    /// Mean squared error between two same-shape tensors, giving `[1,1]`.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean_all(sq)
    }

    /// Reverse pass from a scalar loss. Fails on non-`[1,1]` losses.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Usage(format!(
                "backward requires a scalar [1,1] loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.apply_vjp(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64]) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib.iter()) {
                    *e += c;
                }
            }
            slot => *slot = Some(contrib.to_vec()),
        }
    }

    fn apply_vjp(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let da = matmul_a_bt(g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db = matmul_at_b(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AddRow(a, row) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                self.accumulate(grads, *a, g);
                if self.needs(*row) {
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    }
                    self.accumulate(grads, *row, &dr);
                }
            }
            Op::MulRow(a, row) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                if self.needs(*a) {
                    let r = self.value(*row).data();
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(p, &gv)| gv * r[p % n])
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*row) {
                    let av = self.value(*a).data();
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j] * av[i * n + j];
                        }
                    }
                    self.accumulate(grads, *row, &dr);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.needs(*b) {
                    let db: Vec<f64> = g.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::DivCol(a, col) => {
                let (m, n) = (self.value(*a).rows(), self.value(*a).cols());
                let s = self.value(*col).data();
                if self.needs(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(p, &gv)| gv / s[p / n])
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*col) {
                    let av = self.value(*a).data();
                    let mut ds = vec![0.0; m];
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * av[i * n + j];
                        }
                        ds[i] = -acc / (s[i] * s[i]);
                    }
                    self.accumulate(grads, *col, &ds);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|&v| v * c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::AddConst(x) => self.accumulate(grads, *x, g),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                let dx: Vec<f64> = g.iter().zip(yv).map(|(&gv, &y)| gv * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let dx: Vec<f64> = g.iter().zip(yv).map(|(&gv, &y)| gv * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| gv / (1.0 + (-v).exp()))
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Exp(x) => {
                let yv = node.value.data();
                let dx: Vec<f64> = g.iter().zip(yv).map(|(&gv, &y)| gv * y).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Ln(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g.iter().zip(xv).map(|(&gv, &v)| gv / v).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sqrt(x) => {
                let yv = node.value.data();
                let dx: Vec<f64> = g.iter().zip(yv).map(|(&gv, &y)| gv / (2.0 * y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g.iter().zip(xv).map(|(&gv, &v)| gv * 2.0 * v).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::SumAll(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &dx);
            }
            Op::SumCols(x) => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[i];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = vec![0.0; m * n];
                        for i in 0..m {
                            dp[i * n..(i + 1) * n]
                                .copy_from_slice(&g[i * total + offset..i * total + offset + n]);
                        }
                        self.accumulate(grads, p, &dp);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, from, to) => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let w = to - from;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + from..i * n + to].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::LogSoftmaxRows(x) => {
                // dx = g - softmax(x) * rowsum(g)
                let (m, n) = (node.value.rows(), node.value.cols());
                let yv = node.value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let gsum: f64 = g[i * n..(i + 1) * n].iter().sum();
                    for j in 0..n {
                        dx[i * n + j] = g[i * n + j] - yv[i * n + j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::SelectCols(x, idx) => {
                let n = self.value(*x).cols();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * n + j] += g[i];
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::MinElem(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(p, &gv)| if av[p] <= bv[p] { gv } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(p, &gv)| if bv[p] < av[p] { gv } else { 0.0 })
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
        }
    }
}
