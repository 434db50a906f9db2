//! Reverse-mode tape over a small set of dense primitives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::store::{ParamGrads, ParamId, ParamValues};
use super::tensor::Tensor;
use crate::math;
use crate::{Error, Result};

/// Node handle inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Below this `|Δ·a|` the zero-order-hold input factor uses its series limit.
pub const ZOH_SERIES_EPS: f64 = 1e-6;
const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    SoftmaxRows(NodeId),
    Transpose(NodeId),
    MeanRows(NodeId),
    SumAll(NodeId),
    SumSquares(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        rstd: Vec<f64>,
    },
    Scan {
        x: NodeId,
        delta: NodeId,
        b: NodeId,
        c: NodeId,
        a: NodeId,
        states: Vec<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Bce {
        p: NodeId,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::SoftmaxRows(_) => "softmax",
            Op::Transpose(_) => "transpose",
            Op::MeanRows(_) => "mean_rows",
            Op::SumAll(_) => "sum",
            Op::SumSquares(_) => "sum_squares",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Scan { .. } => "selective_scan",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-use tape. Build the forward pass with the op methods, then call
/// [`Graph::backward`] on a scalar node.
pub struct Graph<'p> {
    params: Option<&'p ParamValues>,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamValues) -> Self {
        Self {
            params: Some(params),
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    /// Graph over constants only.
    pub fn detached() -> Graph<'static> {
        Graph {
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.expect("param node without params").get(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Const | Op::Param(_) => false,
            _ => self.inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Const | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::MeanRows(a)
            | Op::SumAll(a)
            | Op::SumSquares(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scan { x, delta, b, c, a, .. } => vec![*x, *delta, *b, *c, *a],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Bce { p, .. } => vec![*p],
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(t, Op::Const)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let params = self.params.expect("graph built without parameters");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: params.trainable(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    // ---- primitives --------------------------------------------------------

    /// `a · b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let out = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(m, n, out), Op::MatMul(a, b))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`; the usual affine-layer layout.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_t", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let out = mm_t(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(m, n, out), Op::MatMulT(a, b))
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() || va.cols() != vb.cols() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        a: NodeId,
        r: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let vr = self.value(r);
        if vr.len() != n {
            return Err(shape_err(name, format!("[{m},{n}] with row of {}", vr.len())));
        }
        let row = vr.data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(n) {
            chunk.iter_mut().zip(row).for_each(|(x, y)| *x = f(*x, *y));
        }
        self.push(Tensor::from_parts(m, n, out), op)
    }

    /// Adds a length-`n` row to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, "add_row", |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a: [m, n]` element-wise by a length-`n` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, "mul_row", |x, y| x * y, Op::MulRow(a, row))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let va = self.value(a);
        let out = va.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        self.push(t, op)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, math::gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, math::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, math::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, math::softplus, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(Tensor::from_parts(m, n, out), Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let out = transpose(self.value(a).data(), m, n);
        self.push(Tensor::from_parts(n, m, out), Op::Transpose(a))
    }

    /// Column means of `a: [m, n]` as a `[1, n]` row (average pooling over rows).
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let mut out = vec![0.0; n];
        for row in self.value(a).data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::from_parts(1, n, out), Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.dims(*parts.first().ok_or(Error::Empty("concat_rows"))?).1;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != n {
                return Err(shape_err("concat_rows", format!("width {} vs {n}", v.cols())));
            }
            out.extend_from_slice(v.data());
        }
        let m = out.len() / n;
        self.push(Tensor::from_parts(m, n, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.dims(*parts.first().ok_or(Error::Empty("concat_cols"))?).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(shape_err("concat_cols", format!("rows {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::from_parts(m, n, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > m {
            return Err(shape_err("slice_rows", format!("{start}+{len} of {m}")));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        self.push(Tensor::from_parts(len, n, out), Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(shape_err("slice_cols", format!("{start}+{len} of {n}")));
        }
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + len]);
        }
        self.push(Tensor::from_parts(m, len, out), Op::SliceCols(a, start))
    }

    /// Per-row layer normalisation with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(x);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(shape_err("layer_norm", format!("width {n}")));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        for row in self.value(x).data().chunks(n) {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let r = 1.0 / math::sqrt(var + LN_EPS);
            rstd.push(r);
            out.extend(row.iter().enumerate().map(|(j, v)| (v - mu) * r * g[j] + b[j]));
        }
        self.push(
            Tensor::from_parts(m, n, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            },
        )
    }

    /// Selective state-space scan with a diagonal evolution `a` (length `N`).
    ///
    /// Shapes: `x, delta: [T, D]`, `b, c: [T, N]`. Each channel `d` carries its
    /// own `N`-dimensional state, discretised per token by zero-order hold:
    ///
    /// ```text
    /// h_t[d,k] = exp(Δ[t,d]·a_k)·h_{t-1}[d,k] + ((exp(Δ[t,d]·a_k) - 1)/a_k)·b[t,k]·x[t,d]
    /// y[t,d]   = Σ_k c[t,k]·h_t[d,k]
    /// ```
    ///
    /// with `h_0 = 0`. Cost is `O(T·D·N)`; the reverse pass runs the adjoint
    /// recursion backwards over the stored states.
    pub fn selective_scan(
        &mut self,
        x: NodeId,
        delta: NodeId,
        b: NodeId,
        c: NodeId,
        a: NodeId,
    ) -> Result<NodeId> {
        let (t_len, d) = self.dims(x);
        let n = self.value(a).len();
        let ok = self.dims(delta) == (t_len, d)
            && self.dims(b) == (t_len, n)
            && self.dims(c) == (t_len, n);
        if !ok {
            return Err(shape_err(
                "selective_scan",
                format!("x [{t_len},{d}], state {n}"),
            ));
        }
        let (xv, dv, bv, cv, av) = (
            self.value(x).data(),
            self.value(delta).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(a).data(),
        );
        if dv.iter().any(|&s| s <= 0.0) {
            return Err(Error::NonPositiveStep(
                dv.iter().copied().fold(f64::INFINITY, f64::min),
            ));
        }
        let mut h = vec![0.0; d * n];
        let mut states = Vec::with_capacity(t_len * d * n);
        let mut y = vec![0.0; t_len * d];
        for t in 0..t_len {
            let (bt, ct) = (&bv[t * n..(t + 1) * n], &cv[t * n..(t + 1) * n]);
            for ch in 0..d {
                let dt = dv[t * d + ch];
                let xin = xv[t * d + ch];
                let hs = &mut h[ch * n..(ch + 1) * n];
                let mut acc = 0.0;
                for k in 0..n {
                    let z = zoh_factors(av[k], dt);
                    hs[k] = z.abar * hs[k] + z.bfac * bt[k] * xin;
                    acc += ct[k] * hs[k];
                }
                y[t * d + ch] = acc;
            }
            states.extend_from_slice(&h);
        }
        self.push(
            Tensor::from_parts(t_len, d, y),
            Op::Scan {
                x,
                delta,
                b,
                c,
                a,
                states,
            },
        )
    }

    /// Mean softmax cross-entropy of `logits: [m, classes]` against `labels`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (m, k) = self.dims(logits);
        if labels.len() != m {
            return Err(Error::LengthMismatch(labels.len(), m));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(k).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[y];
            softmax_in_place(row);
        }
        self.push(
            Tensor::scalar(loss / m as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Weighted mean binary cross-entropy `(1/m)·Σ w_i·BCE(p_i, y_i)` with
    /// probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: NodeId, targets: &[f64], weights: &[f64]) -> Result<NodeId> {
        let pv = self.value(p).data();
        if pv.is_empty() {
            return Err(Error::Empty("bce"));
        }
        if targets.len() != pv.len() || weights.len() != pv.len() {
            return Err(Error::LengthMismatch(targets.len(), pv.len()));
        }
        let mut loss = 0.0;
        for ((&pi, &y), &w) in pv.iter().zip(targets).zip(weights) {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= w * (y * math::ln(pc) + (1.0 - y) * math::ln(1.0 - pc));
        }
        let m = pv.len() as f64;
        self.push(
            Tensor::scalar(loss / m),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    // ---- reverse pass ------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every trainable parameter
    /// reached by the tape. Frozen parameters get no slot.
    pub fn backward(&self, loss: NodeId) -> Result<ParamGrads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss { len: lv.len() });
        }
        let mut out = match self.params {
            Some(p) => ParamGrads::zeros_like(p),
            None => ParamGrads { slots: Vec::new() },
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            self.backprop_node(idx, &g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut ParamGrads,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let y = self.value(NodeId(idx));
        let mut send = |id: NodeId, contrib: Vec<f64>| {
            if self.nodes[id.0].requires_grad {
                match &mut grads[id.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(contrib),
                }
            }
        };
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Const => {}
            Op::Param(p) => out.accumulate(*p, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if rg(*a) {
                    send(*a, mm_t(g, self.value(*b).data(), m, n, k));
                }
                if rg(*b) {
                    send(*b, mt_m(self.value(*a).data(), g, m, k, n));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if rg(*a) {
                    send(*a, mm(g, self.value(*b).data(), m, n, k));
                }
                if rg(*b) {
                    send(*b, mt_m(g, self.value(*a).data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    send(*a, g.to_vec());
                }
                if rg(*b) {
                    send(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    send(*a, g.to_vec());
                }
                if rg(*b) {
                    send(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    send(*a, g.iter().zip(vb).map(|(g, b)| g * b).collect());
                }
                if rg(*b) {
                    send(*b, g.iter().zip(va).map(|(g, a)| g * a).collect());
                }
            }
            Op::AddRow(a, r) => {
                let n = self.dims(*a).1;
                if rg(*a) {
                    send(*a, g.to_vec());
                }
                if rg(*r) {
                    send(*r, col_sums(g, n));
                }
            }
            Op::MulRow(a, r) => {
                let n = self.dims(*a).1;
                let (va, vr) = (self.value(*a).data(), self.value(*r).data());
                if rg(*a) {
                    let ga = g.iter().enumerate().map(|(i, g)| g * vr[i % n]).collect();
                    send(*a, ga);
                }
                if rg(*r) {
                    let prod: Vec<f64> = g.iter().zip(va).map(|(g, a)| g * a).collect();
                    send(*r, col_sums(&prod, n));
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::Relu(a) => {
                let va = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                send(*a, g.iter().zip(va).map(|(g, x)| g * math::gelu_grad(*x)).collect())
            }
            Op::Sigmoid(a) => send(
                *a,
                g.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect(),
            ),
            Op::Exp(a) => send(*a, g.iter().zip(y.data()).map(|(g, e)| g * e).collect()),
            Op::Log(a) => {
                let va = self.value(*a).data();
                send(*a, g.iter().zip(va).map(|(g, x)| g / x).collect())
            }
            Op::Softplus(a) => {
                let va = self.value(*a).data();
                send(
                    *a,
                    g.iter().zip(va).map(|(g, x)| g * math::sigmoid(*x)).collect(),
                )
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    ga.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                send(*a, ga)
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                send(*a, transpose(g, n, m))
            }
            Op::MeanRows(a) => {
                let (m, n) = self.dims(*a);
                let inv = 1.0 / m as f64;
                let mut ga = Vec::with_capacity(m * n);
                for _ in 0..m {
                    ga.extend(g.iter().map(|v| v * inv));
                }
                send(*a, ga)
            }
            Op::SumAll(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::SumSquares(a) => send(
                *a,
                self.value(*a).data().iter().map(|x| 2.0 * x * g[0]).collect(),
            ),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if rg(p) {
                        send(p, g[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (y.rows(), y.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if rg(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * n + off..i * n + off + w]);
                        }
                        send(p, gp);
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                ga[start * n..start * n + g.len()].copy_from_slice(g);
                send(*a, ga)
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let w = y.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*a, ga)
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
            } => {
                let (m, n) = self.dims(*x);
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut gx = Vec::with_capacity(m * n);
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                let mut xhat = vec![0.0; n];
                let mut gxh = vec![0.0; n];
                for i in 0..m {
                    let row = &xv[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mu = row.iter().sum::<f64>() / n as f64;
                    for j in 0..n {
                        xhat[j] = (row[j] - mu) * rstd[i];
                        gxh[j] = gr[j] * gv[j];
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                    let mean_g = gxh.iter().sum::<f64>() / n as f64;
                    let mean_gx = gxh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    gx.extend((0..n).map(|j| rstd[i] * (gxh[j] - mean_g - xhat[j] * mean_gx)));
                }
                if rg(*x) {
                    send(*x, gx);
                }
                if rg(*gain) {
                    send(*gain, ggain);
                }
                if rg(*bias) {
                    send(*bias, gbias);
                }
            }
            Op::Scan {
                x,
                delta,
                b,
                c,
                a,
                states,
            } => {
                let sg = self.scan_backward(*x, *delta, *b, *c, *a, states, g);
                for (id, gv) in [(*x, sg.x), (*delta, sg.delta), (*b, sg.b), (*c, sg.c), (*a, sg.a)] {
                    if rg(id) {
                        send(id, gv);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.dims(*logits).1;
                let scale = g[0] / labels.len() as f64;
                let mut gl = probs.clone();
                for (row, &lab) in gl.chunks_mut(k).zip(labels) {
                    row[lab] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(*logits, gl)
            }
            Op::Bce {
                p,
                targets,
                weights,
            } => {
                let pv = self.value(*p).data();
                let scale = g[0] / pv.len() as f64;
                let gp = pv
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&pi, &y), &w)| {
                        if pi < PROB_CLAMP || pi > 1.0 - PROB_CLAMP {
                            0.0
                        } else {
                            scale * w * (-y / pi + (1.0 - y) / (1.0 - pi))
                        }
                    })
                    .collect();
                send(*p, gp)
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_backward(
        &self,
        x: NodeId,
        delta: NodeId,
        b: NodeId,
        c: NodeId,
        a: NodeId,
        states: &[f64],
        gy: &[f64],
    ) -> ScanGrads {
        let (t_len, d) = self.dims(x);
        let n = self.value(a).len();
        let (xv, dv, bv, cv, av) = (
            self.value(x).data(),
            self.value(delta).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(a).data(),
        );
        let mut out = ScanGrads {
            x: vec![0.0; t_len * d],
            delta: vec![0.0; t_len * d],
            b: vec![0.0; t_len * n],
            c: vec![0.0; t_len * n],
            a: vec![0.0; n],
        };
        let mut gh = vec![0.0; d * n];
        for t in (0..t_len).rev() {
            let h_t = &states[t * d * n..(t + 1) * d * n];
            let bt = &bv[t * n..(t + 1) * n];
            let ct = &cv[t * n..(t + 1) * n];
            for ch in 0..d {
                let gyd = gy[t * d + ch];
                let dt = dv[t * d + ch];
                let xin = xv[t * d + ch];
                let mut gx = 0.0;
                let mut gdt = 0.0;
                for k in 0..n {
                    let s = ch * n + k;
                    out.c[t * n + k] += gyd * h_t[s];
                    let gs = gh[s] + ct[k] * gyd;
                    let hprev = if t > 0 { states[(t - 1) * d * n + s] } else { 0.0 };
                    let z = zoh_factors(av[k], dt);
                    let bx = bt[k] * xin;
                    gdt += gs * (z.dabar_ddt * hprev + z.dbfac_ddt * bx);
                    out.a[k] += gs * (z.dabar_da * hprev + z.dbfac_da * bx);
                    out.b[t * n + k] += gs * z.bfac * xin;
                    gx += gs * z.bfac * bt[k];
                    gh[s] = gs * z.abar;
                }
                out.x[t * d + ch] += gx;
                out.delta[t * d + ch] += gdt;
            }
        }
        out
    }
}

struct ScanGrads {
    x: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    a: Vec<f64>,
}

/// Zero-order-hold factors for one diagonal entry `a` and step `dt`:
/// `abar = exp(dt·a)`, `bfac = (exp(dt·a) - 1)/a` (so `B̄ = bfac·B`), plus
/// their partial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Zoh {
    pub abar: f64,
    pub bfac: f64,
    pub dabar_ddt: f64,
    pub dabar_da: f64,
    pub dbfac_ddt: f64,
    pub dbfac_da: f64,
}

#[inline]
pub(crate) fn zoh_factors(a: f64, dt: f64) -> Zoh {
    let x = dt * a;
    let e = math::exp(x);
    let (bfac, dbfac_da) = if x.abs() < ZOH_SERIES_EPS {
        (dt, 0.5 * dt * dt)
    } else {
        ((e - 1.0) / a, (dt * e * a - (e - 1.0)) / (a * a))
    };
    Zoh {
        abar: e,
        bfac,
        dabar_ddt: a * e,
        dabar_da: dt * e,
        dbfac_ddt: e,
        dbfac_da,
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>())
}

fn col_sums(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for row in g.chunks(n) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `[m,k] · [k,n]`
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `[m,k] · [n,k]ᵀ`
fn mm_t(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            out.push(ar.iter().zip(br).map(|(x, y)| x * y).sum());
        }
    }
    out
}

/// `[m,k]ᵀ · [m,n]` → `[k,n]`
fn mt_m(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}
