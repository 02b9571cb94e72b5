//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs are earlier nodes, so the
//! tape is topologically ordered by construction and `backward` is a single
//! reverse sweep.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Fixed epsilon used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Swish(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    LogSoftmax(Var),
    MaskedLogSoftmax(Var, Rc<[bool]>),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    GatherCols(Var, Rc<[usize]>),
    SelectBlocks(Var, Rc<[usize]>),
    PairwiseDist(Var, Var),
    RowDist(Var, Var),
    BlockDist(Var, Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of tensor operations for one forward/backward pass.
///
/// Neither `Send` nor `Sync`: a tape belongs to the thread that built it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Its `requires_grad` flag decides whether
    /// gradients are tracked for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        tensor.grad = None;
        self.push_node(Op::Leaf, tensor)
    }

    /// Registers a tracked input (a parameter).
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let mut t = tensor.clone();
        t.requires_grad = true;
        self.leaf(t)
    }

    /// Registers an untracked input.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Clears all gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.backward_done = false;
    }

    fn push_node(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, name: &'static str) -> Result<Var> {
        check_finite(&data, name)?;
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].value.requires_grad);
        let mut t = Tensor::from_parts(shape, data);
        t.requires_grad = requires_grad;
        Ok(self.push_node(op, t))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::PairwiseDist(a, b)
            | Op::RowDist(a, b)
            | Op::BlockDist(a, b)
            | Op::Minimum(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Swish(a)
            | Op::LogSoftmax(a)
            | Op::MaskedLogSoftmax(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::RowSum(a)
            | Op::GatherCols(a, _)
            | Op::SelectBlocks(a, _)
            | Op::Clamp(a, _, _)
            | Op::BroadcastRows(a)
            | Op::Reshape(a) => vec![a],
        }
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => shape_err(format!("{what}: expected a 2-d tensor, got {s:?}")),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return shape_err(format!("matmul: inner dimensions {k} and {k2} differ"));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in ad[i * k..(i + 1) * k].iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        self.push(Op::MatMul(a, b), vec![m, n], out, "matmul")
    }

    /// Adds a `[n]` bias to every row of `[…×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            return shape_err(format!("add_bias: bias {:?} does not match last dim {n}", self.shape(bias)));
        }
        let b = self.data(bias).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::AddBias(x, bias), shape, out, "add_bias")
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Minimum(a, b), "minimum", f64::min)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, c), shape, out, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddScalar(x), shape, out, "add_scalar")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Exp(x), shape, out, "exp")
    }

    /// `x · σ(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Swish(x), shape, out, "swish")
    }

    /// Clamps to `[lo, hi]`; gradient is passed only strictly inside or on
    /// the boundary.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Clamp(x, lo, hi), shape, out, "clamp")
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(x).is_empty() || d == 0 {
            return shape_err("layer_norm: input needs a non-empty last axis");
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err(format!(
                "layer_norm: gain {:?} / bias {:?} must be [{d}]",
                self.shape(gain),
                self.shape(bias)
            ));
        }
        let xd = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            shape,
            out,
            "layer_norm",
        )
    }

    /// Max-shifted log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::LogSoftmax(x), shape, out, "log_softmax")
    }

    /// Log-softmax over the entries of each row where `mask` is true. Masked
    /// entries read 0 and receive no gradient. Every row needs at least one
    /// unmasked entry.
    pub fn masked_log_softmax(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var> {
        let n = self.value(x).last_dim();
        if mask.len() != self.value(x).numel() {
            return shape_err(format!(
                "masked_log_softmax: mask has {} entries, input {}",
                mask.len(),
                self.value(x).numel()
            ));
        }
        let mut out = self.data(x).to_vec();
        for (row, m) in out.chunks_mut(n).zip(mask.chunks(n)) {
            let mx = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::Contract("masked_log_softmax: row fully masked".into()));
            }
            let s: f64 = row.iter().zip(m).filter(|(_, &keep)| keep).map(|(v, _)| (v - mx).exp()).sum();
            let lse = mx + s.ln();
            for (v, &keep) in row.iter_mut().zip(m) {
                *v = if keep { *v - lse } else { 0.0 };
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::MaskedLogSoftmax(x, mask), shape, out, "masked_log_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(Op::SumAll(x), vec![], vec![s], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.data(x).iter().sum::<f64>() / n;
        self.push(Op::MeanAll(x), vec![], vec![s], "mean")
    }

    /// Sums over the last axis: `[…×n] → […]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        let out = self.data(x).chunks(n).map(|r| r.iter().sum()).collect();
        let mut shape = self.shape(x).to_vec();
        shape.pop();
        self.push(Op::RowSum(x), shape, out, "row_sum")
    }

    /// Picks column `idx[i]` of row `i`: `[r×n] → [r]`.
    pub fn gather_cols(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let (r, n) = self.dims2(x, "gather_cols")?;
        if idx.len() != r || idx.iter().any(|&j| j >= n) {
            return shape_err(format!("gather_cols: bad index set for [{r}×{n}]"));
        }
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(i, &j)| d[i * n + j]).collect();
        self.push(Op::GatherCols(x, idx), vec![r], out, "gather_cols")
    }

    /// Picks block `idx[i]` of row `i` from `[r×k×d]`: output `[r×d]`.
    pub fn select_blocks(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let (r, k, d) = match self.shape(x) {
            [r, k, d] => (*r, *k, *d),
            s => return shape_err(format!("select_blocks: expected [r×k×d], got {s:?}")),
        };
        if idx.len() != r || idx.iter().any(|&j| j >= k) {
            return shape_err(format!("select_blocks: bad index set for [{r}×{k}×{d}]"));
        }
        let w = k * d;
        let src = self.data(x);
        let mut out = Vec::with_capacity(r * d);
        for (i, &j) in idx.iter().enumerate() {
            out.extend_from_slice(&src[i * w + j * d..i * w + (j + 1) * d]);
        }
        self.push(Op::SelectBlocks(x, idx), vec![r, d], out, "select_blocks")
    }

    /// Euclidean distances between every row of `a [N×d]` and `b [M×d]`.
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims2(a, "pairwise_dist lhs")?;
        let (m, d2) = self.dims2(b, "pairwise_dist rhs")?;
        if d != d2 {
            return shape_err(format!("pairwise_dist: widths {d} and {d2} differ"));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ar = &ad[i * d..(i + 1) * d];
            for j in 0..m {
                let br = &bd[j * d..(j + 1) * d];
                let s: f64 = ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum();
                out[i * m + j] = s.sqrt();
            }
        }
        self.push(Op::PairwiseDist(a, b), vec![n, m], out, "pairwise_dist")
    }

    /// Row-by-row Euclidean distance of two `[B×d]` tensors: `[B]`.
    pub fn row_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dist")?;
        let (r, d) = self.dims2(a, "row_dist")?;
        let ad = self.data(a);
        let bd = self.data(b);
        let out = (0..r)
            .map(|i| {
                ad[i * d..(i + 1) * d]
                    .iter()
                    .zip(&bd[i * d..(i + 1) * d])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        self.push(Op::RowDist(a, b), vec![r], out, "row_dist")
    }

    /// Distance from each of the `k` rows of `a[i] ∈ [k×d]` to `b[i] ∈ [d]`,
    /// for `a [B×k×d]` and `b [B×d]`: output `[B×k]`.
    pub fn block_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k, d) = match self.shape(a) {
            [r, k, d] => (*r, *k, *d),
            s => return shape_err(format!("block_dist: expected [B×k×d], got {s:?}")),
        };
        let (r2, d2) = self.dims2(b, "block_dist rhs")?;
        if r != r2 || d != d2 {
            return shape_err(format!("block_dist: [{r}×{k}×{d}] vs [{r2}×{d2}]"));
        }
        let w = k * d;
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; r * k];
        for i in 0..r {
            let br = &bd[i * d..(i + 1) * d];
            for blk in 0..k {
                let ar = &ad[i * w + blk * d..i * w + (blk + 1) * d];
                out[i * k + blk] = ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            }
        }
        self.push(Op::BlockDist(a, b), vec![r, k], out, "block_dist")
    }

    /// `[r×p] ++ [r×q] → [r×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, p) = self.dims2(a, "concat_cols lhs")?;
        let (r2, q) = self.dims2(b, "concat_cols rhs")?;
        if r != r2 {
            return shape_err(format!("concat_cols: row counts {r} and {r2} differ"));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = Vec::with_capacity(r * (p + q));
        for i in 0..r {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        self.push(Op::ConcatCols(a, b), vec![r, p + q], out, "concat_cols")
    }

    /// Repeats a `[n]` vector into `[rows×n]`.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let n = match self.shape(v) {
            [n] => *n,
            s => return shape_err(format!("broadcast_rows: expected [n], got {s:?}")),
        };
        let src = self.data(v).to_vec();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(&src);
        }
        self.push(Op::BroadcastRows(v), vec![rows, n], out, "broadcast_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return shape_err(format!("reshape: {:?} to {:?}", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        self.push(Op::Reshape(x), shape.to_vec(), out, "reshape")
    }

    /// Back-propagates from the scalar `loss`, storing gradients on every
    /// tracked node. A second call fails until [`Tape::zero_grad`] runs.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].value.requires_grad {
                    check_finite(&g, "backward")?;
                    self.nodes[idx].value.grad = Some(g);
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        let tracked = |v: Var| nodes[v.0].value.requires_grad;
        // Lazily allocates the gradient slot of an input.
        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let numel = |v: Var| nodes[v.0].value.numel();
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let (ad, bd) = (val(a), val(b));
                if tracked(a) {
                    let ga = slot(grads, a, m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            ga[i * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = ad[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *o += aik * gv;
                            }
                        }
                    }
                }
            }
            &Op::AddBias(x, b) => {
                if tracked(x) {
                    let gx = slot(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if tracked(b) {
                    let n = numel(b);
                    let gb = slot(grads, b, n);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if tracked(a) {
                    let ga = slot(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if tracked(b) {
                    let gb = slot(grads, b, g.len());
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o += sign * v);
                }
            }
            &Op::Mul(a, b) => {
                if tracked(a) {
                    let bd = val(b).to_vec();
                    let ga = slot(grads, a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bd[i];
                    }
                }
                if tracked(b) {
                    let ad = val(a).to_vec();
                    let gb = slot(grads, b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ad[i];
                    }
                }
            }
            &Op::Minimum(a, b) => {
                let (ad, bd) = (val(a), val(b));
                let pick_a: Vec<bool> = ad.iter().zip(bd).map(|(x, y)| x <= y).collect();
                if tracked(a) {
                    let ga = slot(grads, a, g.len());
                    for i in 0..g.len() {
                        if pick_a[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, b, g.len());
                    for i in 0..g.len() {
                        if !pick_a[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            &Op::Scale(x, c) => {
                let gx = slot(grads, x, g.len());
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
            }
            &Op::AddScalar(x) | &Op::Reshape(x) => {
                let gx = slot(grads, x, g.len());
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            &Op::Exp(x) => {
                let gx = slot(grads, x, g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * out[i];
                }
            }
            &Op::Swish(x) => {
                let xd = val(x).to_vec();
                let gx = slot(grads, x, g.len());
                for i in 0..g.len() {
                    let s = sigmoid(xd[i]);
                    gx[i] += g[i] * (s + xd[i] * s * (1.0 - s));
                }
            }
            &Op::Clamp(x, lo, hi) => {
                let xd = val(x).to_vec();
                let gx = slot(grads, x, g.len());
                for i in 0..g.len() {
                    if xd[i] >= lo && xd[i] <= hi {
                        gx[i] += g[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = numel(gain);
                let gd = val(gain).to_vec();
                if tracked(gain) {
                    let gg = slot(grads, gain, d);
                    for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row_g[j] * row_h[j];
                        }
                    }
                }
                if tracked(bias) {
                    let gb = slot(grads, bias, d);
                    for row_g in g.chunks(d) {
                        gb.iter_mut().zip(row_g).for_each(|(o, v)| *o += v);
                    }
                }
                if tracked(x) {
                    let gx = slot(grads, x, g.len());
                    let mut gh = vec![0.0; d];
                    for (r, (row_g, row_h)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut sum_gh = 0.0;
                        let mut sum_ghh = 0.0;
                        for j in 0..d {
                            gh[j] = row_g[j] * gd[j];
                            sum_gh += gh[j];
                            sum_ghh += gh[j] * row_h[j];
                        }
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += scale * (d as f64 * gh[j] - sum_gh - row_h[j] * sum_ghh);
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let n = node.value.last_dim();
                let gx = slot(grads, x, g.len());
                for (r, (row_g, row_y)) in g.chunks(n).zip(out.chunks(n)).enumerate() {
                    let s: f64 = row_g.iter().sum();
                    for j in 0..n {
                        gx[r * n + j] += row_g[j] - row_y[j].exp() * s;
                    }
                }
            }
            Op::MaskedLogSoftmax(x, mask) => {
                let x = *x;
                let n = node.value.last_dim();
                let gx = slot(grads, x, g.len());
                for (r, ((row_g, row_y), m)) in g.chunks(n).zip(out.chunks(n)).zip(mask.chunks(n)).enumerate() {
                    let s: f64 = row_g.iter().zip(m).filter(|(_, &k)| k).map(|(v, _)| *v).sum();
                    for j in 0..n {
                        if m[j] {
                            gx[r * n + j] += row_g[j] - row_y[j].exp() * s;
                        }
                    }
                }
            }
            &Op::SumAll(x) => {
                let gx = slot(grads, x, numel(x));
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
            &Op::MeanAll(x) => {
                let n = numel(x);
                let gx = slot(grads, x, n);
                let v = g[0] / n as f64;
                gx.iter_mut().for_each(|o| *o += v);
            }
            &Op::RowSum(x) => {
                let n = nodes[x.0].value.last_dim();
                let gx = slot(grads, x, numel(x));
                for (r, &gv) in g.iter().enumerate() {
                    gx[r * n..(r + 1) * n].iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::GatherCols(x, idx) => {
                let x = *x;
                let n = nodes[x.0].value.last_dim();
                let gx = slot(grads, x, numel(x));
                for (i, &j) in idx.iter().enumerate() {
                    gx[i * n + j] += g[i];
                }
            }
            Op::SelectBlocks(x, idx) => {
                let x = *x;
                let d = node.value.last_dim();
                let w = numel(x) / idx.len();
                let gx = slot(grads, x, numel(x));
                for (i, &j) in idx.iter().enumerate() {
                    for c in 0..d {
                        gx[i * w + j * d + c] += g[i * d + c];
                    }
                }
            }
            &Op::PairwiseDist(a, b) => {
                let d = nodes[a.0].value.last_dim();
                let m = node.value.last_dim();
                let n = node.value.rows();
                let (ad, bd) = (val(a).to_vec(), val(b).to_vec());
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; bd.len()];
                for i in 0..n {
                    for j in 0..m {
                        let dist = out[i * m + j];
                        let gij = g[i * m + j];
                        if dist == 0.0 || gij == 0.0 {
                            continue;
                        }
                        let c = gij / dist;
                        for k in 0..d {
                            let diff = c * (ad[i * d + k] - bd[j * d + k]);
                            ga[i * d + k] += diff;
                            gb[j * d + k] -= diff;
                        }
                    }
                }
                if tracked(a) {
                    let s = slot(grads, a, ga.len());
                    s.iter_mut().zip(&ga).for_each(|(o, v)| *o += v);
                }
                if tracked(b) {
                    let s = slot(grads, b, gb.len());
                    s.iter_mut().zip(&gb).for_each(|(o, v)| *o += v);
                }
            }
            &Op::RowDist(a, b) => {
                let d = nodes[a.0].value.last_dim();
                let (ad, bd) = (val(a).to_vec(), val(b).to_vec());
                let mut ga = vec![0.0; ad.len()];
                for (i, (&dist, &gi)) in out.iter().zip(g).enumerate() {
                    if dist == 0.0 {
                        continue;
                    }
                    let c = gi / dist;
                    for k in 0..d {
                        ga[i * d + k] = c * (ad[i * d + k] - bd[i * d + k]);
                    }
                }
                if tracked(a) {
                    let s = slot(grads, a, ga.len());
                    s.iter_mut().zip(&ga).for_each(|(o, v)| *o += v);
                }
                if tracked(b) {
                    let s = slot(grads, b, ga.len());
                    s.iter_mut().zip(&ga).for_each(|(o, v)| *o -= v);
                }
            }
            &Op::BlockDist(a, b) => {
                let d = nodes[b.0].value.last_dim();
                let k = node.value.last_dim();
                let w = k * d;
                let (ad, bd) = (val(a).to_vec(), val(b).to_vec());
                let mut ga = vec![0.0; ad.len()];
                let mut gb = vec![0.0; bd.len()];
                for i in 0..node.value.rows() {
                    for blk in 0..k {
                        let dist = out[i * k + blk];
                        if dist == 0.0 {
                            continue;
                        }
                        let c = g[i * k + blk] / dist;
                        for c_ in 0..d {
                            let diff = c * (ad[i * w + blk * d + c_] - bd[i * d + c_]);
                            ga[i * w + blk * d + c_] += diff;
                            gb[i * d + c_] -= diff;
                        }
                    }
                }
                if tracked(a) {
                    let s = slot(grads, a, ga.len());
                    s.iter_mut().zip(&ga).for_each(|(o, v)| *o += v);
                }
                if tracked(b) {
                    let s = slot(grads, b, gb.len());
                    s.iter_mut().zip(&gb).for_each(|(o, v)| *o += v);
                }
            }
            &Op::ConcatCols(a, b) => {
                let p = nodes[a.0].value.last_dim();
                let q = nodes[b.0].value.last_dim();
                let r = node.value.rows();
                if tracked(a) {
                    let ga = slot(grads, a, r * p);
                    for i in 0..r {
                        for c in 0..p {
                            ga[i * p + c] += g[i * (p + q) + c];
                        }
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, b, r * q);
                    for i in 0..r {
                        for c in 0..q {
                            gb[i * q + c] += g[i * (p + q) + p + c];
                        }
                    }
                }
            }
            &Op::BroadcastRows(v) => {
                let n = numel(v);
                let gv = slot(grads, v, n);
                for row in g.chunks(n) {
                    gv.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let x = tape.constant(t(&[2, 2], &[3.0, -1.0, 2.5, 7.0]));
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.data(y), tape.data(x));

        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let z = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.shape(z), &[2, 1]);
        assert_eq!(tape.data(z), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn swish_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 40.0, -40.0]));
        let y = tape.swish(x).unwrap();
        let d = tape.data(y);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 40.0).abs() < 1e-12);
        assert!(d[2].abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[2.0, 2.0, 2.0, 2.0]));
        let g = tape.constant(Tensor::full(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_moments() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 5], &[1.0, 5.0, -2.0, 0.5, 3.0, 10.0, 11.0, 9.0, 8.5, 12.0]));
        let g = tape.constant(Tensor::full(&[5], 2.0));
        let b = tape.constant(t(&[5], &[0.5; 5]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(5) {
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!((mean - 0.5).abs() < 1e-12);
            assert!((var.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_rejects_gain_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let g = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.layer_norm(x, g, b).is_err());
    }

    #[test]
    fn log_softmax_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[4.0, 4.0, 4.0]));
        let y = tape.log_softmax(x).unwrap();
        for v in tape.data(y) {
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
        let x = tape.constant(t(&[1, 3], &[0.3, -1.2, 2.0]));
        let shifted = tape.constant(t(&[1, 3], &[100.3, 98.8, 102.0]));
        let y1 = tape.log_softmax(x).unwrap();
        let y2 = tape.log_softmax(shifted).unwrap();
        for (a, b) in tape.data(y1).iter().zip(tape.data(y2)) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = tape.constant(t(&[1, 2], &[0.0, 1000.0]));
        let y = tape.log_softmax(x).unwrap();
        assert_eq!(tape.data(y), &[-1000.0, 0.0]);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]).with_grad());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_twice_errors_until_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
        tape.zero_grad();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn untracked_leaves_get_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn masked_log_softmax_ignores_masked_entries() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[1.0, 50.0, 1.0]).with_grad());
        let mask: Rc<[bool]> = vec![true, false, true].into();
        let y = tape.masked_log_softmax(x, mask).unwrap();
        let d = tape.data(y).to_vec();
        assert!((d[0] + 2f64.ln()).abs() < 1e-15);
        assert_eq!(d[1], 0.0);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap()[1], 0.0);
    }

    #[test]
    fn distances_are_zero_on_equal_rows_with_zero_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], &[1.0, 2.0]).with_grad());
        let b = tape.leaf(t(&[1, 2], &[1.0, 2.0]).with_grad());
        let d = tape.row_dist(a, b).unwrap();
        assert_eq!(tape.data(d), &[0.0]);
        let s = tape.sum(d).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 0.0]);
    }
}
