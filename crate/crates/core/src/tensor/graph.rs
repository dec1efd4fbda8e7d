//! Wengert-list autodiff.
//!
//! Every primitive appends a node whose inputs have strictly smaller ids, so
//! the node vector is already in topological order and the backward pass is
//! a single reverse sweep.

use std::sync::Arc;

use super::kernels::{log_softmax_row, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_row};
use super::{shape_err, Real, Result, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + b` with `b` broadcast over the rows of `a`
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, S),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// stores 1/σ per row
    LayerNorm(NodeId, Vec<S>),
    Embedding(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    Gather(NodeId, Vec<Option<usize>>),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        bias: Option<NodeId>,
        probs: Vec<S>,
        scale: S,
    },
    StopGradient,
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// A tape of primitive operations.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable leaf sharing storage with the caller.
    pub fn param(&mut self, value: Arc<Tensor<S>>) -> NodeId {
        self.shared(value, true)
    }

    /// Leaf that shares its value without copying.
    pub fn shared(&mut self, value: Arc<Tensor<S>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] || av.shape().is_empty() {
            return shape_err("matmul", &[av.shape(), bv.shape()]);
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    /// `a[m,k] · b[n,k]ᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return shape_err("matmul_nt", &[av.shape(), bv.shape()]);
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![S::zero(); m * n];
        matmul_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    /// Elementwise sum; `b` may also be a row vector broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            let t = Tensor::new(av.shape(), data)?;
            return Ok(self.push(t, Op::Add(a, b), rg));
        }
        if bv.numel() == av.cols() && bv.rows() == 1 {
            let c = av.cols();
            let bd = bv.data();
            let data = av.data().iter().enumerate().map(|(i, &x)| x + bd[i % c]).collect();
            let t = Tensor::new(av.shape(), data)?;
            return Ok(self.push(t, Op::AddRow(a, b), rg));
        }
        shape_err("add", &[av.shape(), bv.shape()])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err("sub", &[av.shape(), bv.shape()]);
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let t = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may also be a row vector broadcast over `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let rg = self.any_grad(&[a, b]);
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
            let t = Tensor::new(av.shape(), data)?;
            return Ok(self.push(t, Op::Mul(a, b), rg));
        }
        if bv.numel() == av.cols() && bv.rows() == 1 {
            let c = av.cols();
            let bd = bv.data();
            let data = av.data().iter().enumerate().map(|(i, &x)| x * bd[i % c]).collect();
            let t = Tensor::new(av.shape(), data)?;
            return Ok(self.push(t, Op::MulRow(a, b), rg));
        }
        shape_err("mul", &[av.shape(), bv.shape()])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = S::of(c);
        let t = self.value(a).map(|x| x * c);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = S::of(c);
        let t = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(S) -> S, op: Op<S>) -> NodeId {
        let t = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    fn rowwise(&self, a: NodeId, f: impl Fn(&[S], &mut [S])) -> Tensor<S> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![S::zero(); av.numel()];
        if c > 0 {
            for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
                f(x, o);
            }
        }
        Tensor::new(av.shape(), out).expect("same shape")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.rowwise(a, softmax_row);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis (max-subtracted).
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.rowwise(a, log_softmax_row);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// Layer normalization over the last axis without affine parameters.
    /// A constant row normalizes to zeros.
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let c = av.cols();
        let mut out = vec![S::zero(); av.numel()];
        let mut inv_std = Vec::with_capacity(av.rows());
        let n = S::of(c as f64);
        for (x, o) in av.data().chunks(c.max(1)).zip(out.chunks_mut(c.max(1))) {
            let mean = x.iter().copied().sum::<S>() / n;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = S::one() / (var + S::of(LAYER_NORM_EPS)).sqrt();
            for (oo, &v) in o.iter_mut().zip(x) {
                *oo = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(av.shape(), out).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(t, Op::LayerNorm(a, inv_std), rg)
    }

    /// Row lookup `table[ids[i]]`, shape `[ids.len(), d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return shape_err("embedding", &[tv.shape()]);
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Invalid {
                op: "embedding",
                msg: format!("index {bad} out of range for {v} rows"),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(t, Op::Embedding(table, ids.to_vec()), rg))
    }

    /// Concatenate 2-d tensors along the last axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
            return shape_err("concat", &shapes);
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let c = v.cols();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let t = Tensor::new(&[rows, total], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenate along the first axis (row blocks).
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            let shapes: Vec<&[usize]> = parts.iter().map(|&p| self.shape(p)).collect();
            return shape_err("concat", &shapes);
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let t = Tensor::new(&[rows, cols], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a 2-d view.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let c = av.cols();
        if start > end || end > c {
            return shape_err("slice", &[av.shape(), &[start, end]]);
        }
        let w = end - start;
        let mut out = Vec::with_capacity(av.rows() * w);
        for row in av.data().chunks(c.max(1)) {
            out.extend_from_slice(&row[start..end]);
        }
        let t = Tensor::new(&[av.rows(), w], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::SliceCols(a, start, end), rg))
    }

    /// Rows `start..end` of a 2-d view.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.value(a);
        let c = av.cols();
        if start > end || end > av.rows() {
            return shape_err("slice", &[av.shape(), &[start, end]]);
        }
        let t = Tensor::new(&[end - start, c], av.data()[start * c..end * c].to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::SliceRows(a, start), rg))
    }

    /// `out[i] = a[idx[i]]` row-wise; rows may repeat.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if idx.iter().any(|&i| i >= r) {
            return shape_err("gather_rows", &[av.shape(), &[idx.len()]]);
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&av.data()[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(&[idx.len(), c], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Flat gather: `out.flat[i] = a.flat[idx[i]]`, or 0 where `idx[i]` is `None`.
    pub fn gather(&mut self, a: NodeId, idx: Vec<Option<usize>>, shape: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        if idx.iter().flatten().any(|&i| i >= av.numel()) || shape.iter().product::<usize>() != idx.len() {
            return shape_err("gather", &[av.shape(), shape]);
        }
        let out = idx.iter().map(|i| i.map_or(S::zero(), |i| av.data()[i])).collect();
        let t = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::Gather(a, idx), rg))
    }

    /// Picks `a[i, idx[i]]` from a 2-d tensor, shape `[rows]`.
    pub fn pick(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if idx.len() != r || idx.iter().any(|&i| i >= c) {
            return shape_err("pick", &[av.shape(), &[idx.len()]]);
        }
        let flat = idx.iter().enumerate().map(|(row, &i)| Some(row * c + i)).collect();
        self.gather(a, flat, &[r])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: S = self.value(a).data().iter().copied().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s: S = v.data().iter().copied().sum::<S>() / S::of(v.numel().max(1) as f64);
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = (*self.nodes[a.0].value).clone().reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Identity in the forward pass; contributes no gradient.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let value = Arc::clone(&self.nodes[a.0].value);
        self.nodes.push(Node {
            value,
            op: Op::StopGradient,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Scaled dot-product attention
    /// `softmax((q·kᵀ + bias) / √d + mask) · v` with `q:[tq,d]`, `k:[tk,d]`,
    /// `v:[tk,dv]`, optional differentiable `bias:[tq,tk]` and a constant
    /// additive `mask:[tq,tk]` (use `-inf` to forbid). Fully masked rows
    /// produce zeros.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        bias: Option<NodeId>,
        mask: &Tensor<S>,
    ) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = (qv.rows(), qv.cols());
        let (tk, dv) = (kv.rows(), vv.cols());
        let bad = qv.shape().len() != 2
            || kv.shape().len() != 2
            || kv.cols() != d
            || vv.rows() != tk
            || mask.shape() != [tq, tk];
        if bad {
            return shape_err("attention", &[qv.shape(), kv.shape(), vv.shape(), mask.shape()]);
        }
        if let Some(b) = bias {
            if self.shape(b) != [tq, tk] {
                return shape_err("attention", &[self.shape(b), &[tq, tk]]);
            }
        }
        let scale = S::one() / S::of(d as f64).sqrt();
        let mut scores = vec![S::zero(); tq * tk];
        matmul_nt_acc(qv.data(), kv.data(), &mut scores, tq, d, tk);
        if let Some(b) = bias {
            for (s, &bb) in scores.iter_mut().zip(self.value(b).data()) {
                *s += bb;
            }
        }
        for (s, &m) in scores.iter_mut().zip(mask.data()) {
            *s = *s * scale + m;
        }
        let mut probs = vec![S::zero(); tq * tk];
        if tk > 0 {
            for (s, p) in scores.chunks(tk).zip(probs.chunks_mut(tk)) {
                softmax_row(s, p);
            }
        }
        let mut out = vec![S::zero(); tq * dv];
        matmul_acc(&probs, vv.data(), &mut out, tq, tk, dv);
        let t = Tensor::new(&[tq, dv], out)?;
        let mut ins = vec![q, k, v];
        ins.extend(bias);
        let rg = self.any_grad(&ins);
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                bias,
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<'_, S>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", lv.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, nodes: self });
        }
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, nodes: self })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        // Lazily allocated accumulator for input `id`.
        fn acc<S: Real>(grads: &mut [Option<Vec<S>>], id: NodeId, len: usize) -> &mut Vec<S> {
            grads[id.0].get_or_insert_with(|| vec![S::zero(); len])
        }
        let numel = |id: NodeId| self.nodes[id.0].value.numel();
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
                if wants(a) {
                    matmul_nt_acc(g, bv.data(), acc(grads, a, m * k), m, n, k);
                }
                if wants(b) {
                    matmul_tn_acc(av.data(), g, acc(grads, b, k * n), m, k, n);
                }
            }
            &Op::MatMulNt(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if wants(a) {
                    matmul_acc(g, bv.data(), acc(grads, a, m * k), m, n, k);
                }
                if wants(b) {
                    matmul_tn_acc(g, av.data(), acc(grads, b, n * k), m, n, k);
                }
            }
            &Op::Add(a, b) => {
                for id in [a, b] {
                    if wants(id) {
                        let ga = acc(grads, id, g.len());
                        ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            &Op::AddRow(a, b) => {
                if wants(a) {
                    let ga = acc(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if wants(b) {
                    let c = numel(b);
                    let gb = acc(grads, b, c);
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % c] += y;
                    }
                }
            }
            &Op::Sub(a, b) => {
                if wants(a) {
                    let ga = acc(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if wants(b) {
                    let gb = acc(grads, b, g.len());
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let bv = val(b);
                    let ga = acc(grads, a, g.len());
                    for ((x, &y), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x += y * bb;
                    }
                }
                if wants(b) {
                    let av = val(a);
                    let gb = acc(grads, b, g.len());
                    for ((x, &y), &aa) in gb.iter_mut().zip(g).zip(av) {
                        *x += y * aa;
                    }
                }
            }
            &Op::MulRow(a, b) => {
                let c = numel(b);
                if wants(a) {
                    let bv = val(b);
                    let ga = acc(grads, a, g.len());
                    for (i, (x, &y)) in ga.iter_mut().zip(g).enumerate() {
                        *x += y * bv[i % c];
                    }
                }
                if wants(b) {
                    let av = val(a);
                    let gb = acc(grads, b, c);
                    for (i, (&y, &aa)) in g.iter().zip(av).enumerate() {
                        gb[i % c] += y * aa;
                    }
                }
            }
            &Op::Scale(a, c) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * c);
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => {
                let ga = acc(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            &Op::Sigmoid(a) => {
                let out = node.value.data();
                let ga = acc(grads, a, g.len());
                for ((x, &y), &s) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * s * (S::one() - s);
                }
            }
            &Op::Tanh(a) => {
                let out = node.value.data();
                let ga = acc(grads, a, g.len());
                for ((x, &y), &t) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * (S::one() - t * t);
                }
            }
            &Op::Relu(a) => {
                let inp = val(a);
                let ga = acc(grads, a, g.len());
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(inp) {
                    if v > S::zero() {
                        *x += y;
                    }
                }
            }
            &Op::Exp(a) => {
                let out = node.value.data();
                let ga = acc(grads, a, g.len());
                for ((x, &y), &e) in ga.iter_mut().zip(g).zip(out) {
                    *x += y * e;
                }
            }
            &Op::Square(a) => {
                let inp = val(a);
                let ga = acc(grads, a, g.len());
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(inp) {
                    *x += y * (v + v);
                }
            }
            &Op::Softmax(a) => {
                let c = node.value.cols().max(1);
                let p = node.value.data();
                let ga = acc(grads, a, g.len());
                for ((gr, pr), xr) in g.chunks(c).zip(p.chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot: S = gr.iter().zip(pr).map(|(&y, &pp)| y * pp).sum();
                    for ((x, &y), &pp) in xr.iter_mut().zip(gr).zip(pr) {
                        *x += pp * (y - dot);
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let c = node.value.cols().max(1);
                let lp = node.value.data();
                let ga = acc(grads, a, g.len());
                for ((gr, lr), xr) in g.chunks(c).zip(lp.chunks(c)).zip(ga.chunks_mut(c)) {
                    let total: S = gr.iter().copied().sum();
                    for ((x, &y), &l) in xr.iter_mut().zip(gr).zip(lr) {
                        let p = if l == S::neg_infinity() { S::zero() } else { l.exp() };
                        *x += y - p * total;
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                let a = *a;
                let c = node.value.cols().max(1);
                let n = S::of(c as f64);
                let y = node.value.data();
                let ga = acc(grads, a, g.len());
                for (((gr, yr), xr), &inv) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)).zip(inv_std) {
                    let mg = gr.iter().copied().sum::<S>() / n;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for ((x, &gg), &yy) in xr.iter_mut().zip(gr).zip(yr) {
                        *x += inv * (gg - mg - yy * mgy);
                    }
                }
            }
            Op::Embedding(t, ids) => {
                let t = *t;
                let d = self.nodes[t.0].value.cols();
                let len = numel(t);
                let gt = acc(grads, t, len);
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g[r * d + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    if wants(p) {
                        let len = numel(p);
                        let gp = acc(grads, p, len);
                        for (r, row) in gp.chunks_mut(c.max(1)).enumerate() {
                            for (j, x) in row.iter_mut().enumerate() {
                                *x += g[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = numel(p);
                    if wants(p) {
                        let gp = acc(grads, p, len);
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(x, &y)| *x += y);
                    }
                    off += len;
                }
            }
            &Op::SliceCols(a, start, end) => {
                let c = self.nodes[a.0].value.cols();
                let w = end - start;
                let len = numel(a);
                let ga = acc(grads, a, len);
                if w > 0 {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (j, &y) in gr.iter().enumerate() {
                            ga[r * c + start + j] += y;
                        }
                    }
                }
            }
            &Op::SliceRows(a, start) => {
                let c = self.nodes[a.0].value.cols();
                let len = numel(a);
                let ga = acc(grads, a, len);
                ga[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, &y)| *x += y);
            }
            Op::GatherRows(a, idx) => {
                let a = *a;
                let c = self.nodes[a.0].value.cols();
                let len = numel(a);
                let ga = acc(grads, a, len);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[i * c + j] += g[r * c + j];
                    }
                }
            }
            Op::Gather(a, idx) => {
                let a = *a;
                let len = numel(a);
                let ga = acc(grads, a, len);
                for (&y, i) in g.iter().zip(idx) {
                    if let Some(i) = *i {
                        ga[i] += y;
                    }
                }
            }
            &Op::Sum(a) => {
                let len = numel(a);
                let ga = acc(grads, a, len);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            &Op::Mean(a) => {
                let len = numel(a);
                let s = g[0] / S::of(len.max(1) as f64);
                let ga = acc(grads, a, len);
                ga.iter_mut().for_each(|x| *x += s);
            }
            Op::Attention {
                q,
                k,
                v,
                bias,
                probs,
                scale,
            } => {
                let (q, k, v, scale) = (*q, *k, *v, *scale);
                let (qv, kv, vv) = (val(q), val(k), val(v));
                let tq = self.nodes[q.0].value.rows();
                let d = self.nodes[q.0].value.cols();
                let tk = self.nodes[k.0].value.rows();
                let dv = self.nodes[v.0].value.cols();
                if wants(v) {
                    matmul_tn_acc(probs, g, acc(grads, v, tk * dv), tq, tk, dv);
                }
                // dP = dO·Vᵀ, dS = P ⊙ (dP − rowsum(dP ⊙ P)), then × scale
                let mut dp = vec![S::zero(); tq * tk];
                matmul_nt_acc(g, vv, &mut dp, tq, dv, tk);
                if tk > 0 {
                    for (dr, pr) in dp.chunks_mut(tk).zip(probs.chunks(tk)) {
                        let dot: S = dr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                        for (x, &p) in dr.iter_mut().zip(pr) {
                            *x = p * (*x - dot) * scale;
                        }
                    }
                }
                if wants(q) {
                    matmul_acc(&dp, kv, acc(grads, q, tq * d), tq, tk, d);
                }
                if wants(k) {
                    matmul_tn_acc(&dp, qv, acc(grads, k, tk * d), tq, tk, d);
                }
                if let Some(b) = *bias {
                    if wants(b) {
                        let gb = acc(grads, b, tq * tk);
                        gb.iter_mut().zip(&dp).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        // Inputs that do not require grad may have received accumulators
        // through the unconditional arms above; drop them so that
        // stop-gradient boundaries stay exact.
        let clear = |grads: &mut [Option<Vec<S>>], id: NodeId| {
            if !self.nodes[id.0].requires_grad {
                grads[id.0] = None;
            }
        };
        match &node.op {
            &Op::Scale(a, _)
            | &Op::AddScalar(a)
            | &Op::Reshape(a)
            | &Op::Sigmoid(a)
            | &Op::Tanh(a)
            | &Op::Relu(a)
            | &Op::Exp(a)
            | &Op::Square(a)
            | &Op::Softmax(a)
            | &Op::LogSoftmax(a)
            | &Op::LayerNorm(a, _)
            | &Op::Embedding(a, _)
            | &Op::SliceCols(a, _, _)
            | &Op::SliceRows(a, _)
            | &Op::GatherRows(a, _)
            | &Op::Gather(a, _)
            | &Op::Sum(a)
            | &Op::Mean(a) => clear(grads, a),
            Op::ConcatRows(parts) => {
                for &p in parts {
                    clear(grads, p)
                }
            }
            _ => {}
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<'g, S> {
    grads: Vec<Option<Vec<S>>>,
    nodes: &'g Graph<S>,
}

impl<S: Real> Gradients<'_, S> {
    /// Gradient of `id`; zeros if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor<S> {
        let shape = self.nodes.shape(id);
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any gradient reached `id`.
    pub fn reached(&self, id: NodeId) -> bool {
        self.grads[id.0].is_some()
    }
}

impl<S: Real> Tensor<S> {
    /// `[ids.len(), depth]` one-hot rows.
    pub fn one_hot(ids: &[usize], depth: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= depth) {
            return Err(TensorError::Invalid {
                op: "one_hot",
                msg: format!("index {bad} out of range for depth {depth}"),
            });
        }
        let mut data = vec![S::zero(); ids.len() * depth];
        for (r, &i) in ids.iter().enumerate() {
            data[r * depth + i] = S::one();
        }
        Tensor::new(&[ids.len(), depth], data)
    }
}
