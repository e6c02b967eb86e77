//! Eager reverse-mode differentiation tape.
//!
//! Every operation computes its value immediately and records enough
//! structure to propagate adjoints backwards. Parameters enter the tape as
//! leaf nodes; `backward` accumulates their adjoints additively into the
//! owning [`ParamSet`], so a parameter used at many time steps receives the
//! sum of all its per-use gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamId, ParamSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(u32);

enum Op {
    Input,
    Param(ParamId),
    MatVec {
        weight: NodeId,
        vector: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale {
        node: NodeId,
        factor: f64,
    },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Concat(NodeId, NodeId),
    Row {
        matrix: NodeId,
        index: usize,
    },
    Flatten(NodeId),
    SumAll(NodeId),
    SumMany(Vec<NodeId>),
    TemporalConv {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        width: usize,
    },
    TemporalMaxPool {
        input: NodeId,
        argmax: Vec<u32>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
    },
    SigmoidCrossEntropy {
        logits: NodeId,
        target: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// One forward computation. Build it, read values eagerly, then call
/// [`Graph::backward`] on a scalar loss node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Elementwise sigmoid on raw values; forward-only helper.
pub fn sigmoid_values(x: &Tensor) -> Tensor {
    let values = x.values().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), values).expect("same shape")
}

/// Numerically stable softmax on raw values (max-subtraction form).
pub fn softmax_values(x: &Tensor) -> Tensor {
    let max = x.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.values().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(x.shape().to_vec(), exps.iter().map(|&e| e / sum).collect()).expect("same shape")
}

#[inline]
fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log(sum(e^x_i)) with max subtraction.
fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0 as usize].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, value });
        id
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Parameter leaf. Memoized: the same parameter maps to one node per graph.
    pub fn param(&mut self, id: ParamId, params: &ParamSet) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(Op::Param(id), params.value(id).clone());
        self.param_nodes.insert(id, node);
        node
    }

    /// y = W.x for W `[rows x cols]` and x `[cols]`.
    pub fn matvec(&mut self, weight: NodeId, vector: NodeId) -> Result<NodeId> {
        let w = self.value(weight);
        let x = self.value(vector);
        if w.shape().len() != 2 || w.shape()[1] != x.len() {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("weight {:?} vs vector {:?}", w.shape(), x.shape()),
            });
        }
        let rows = w.shape()[0];
        let cols = w.shape()[1];
        let mut out = vec![0.0; rows];
        let xv = x.values();
        for (o, w_row) in out.iter_mut().zip(w.values().chunks_exact(cols)) {
            *o = w_row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(
            Op::MatVec { weight, vector },
            Tensor::new(vec![rows], out).expect("shape"),
        ))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: op_name,
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let values = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(op, Tensor::new(shape, values).expect("shape")))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, node: NodeId, factor: f64) -> NodeId {
        let t = self.value(node);
        let values = t.values().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(
            Op::Scale { node, factor },
            Tensor::new(shape, values).expect("shape"),
        )
    }

    fn unary_elementwise(&mut self, node: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let t = self.value(node);
        let values = t.values().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(op, Tensor::new(shape, values).expect("shape"))
    }

    /// Elementwise 1/(1+e^-x); outputs strictly inside (0, 1).
    pub fn sigmoid(&mut self, node: NodeId) -> NodeId {
        self.unary_elementwise(node, sigmoid_scalar, Op::Sigmoid(node))
    }

    /// Elementwise hyperbolic tangent; outputs in (-1, 1).
    pub fn tanh(&mut self, node: NodeId) -> NodeId {
        self.unary_elementwise(node, f64::tanh, Op::Tanh(node))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, node: NodeId) -> NodeId {
        self.unary_elementwise(node, |v| v.max(0.0), Op::Relu(node))
    }

    /// Stable softmax over a vector of length >= 1.
    pub fn softmax(&mut self, node: NodeId) -> Result<NodeId> {
        if self.value(node).is_empty() {
            return Err(Error::EmptySequence);
        }
        let value = softmax_values(self.value(node));
        Ok(self.push(Op::Softmax(node), value))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut values = self.value(a).values().to_vec();
        values.extend_from_slice(self.value(b).values());
        let value = Tensor::from_vec(values);
        self.push(Op::Concat(a, b), value)
    }

    /// Select row `index` of a `[T x d]` node.
    pub fn row(&mut self, matrix: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(matrix);
        if t.shape().len() != 2 || index >= t.rows() {
            return Err(Error::Shape {
                op: "row",
                detail: format!("row {} of {:?}", index, t.shape()),
            });
        }
        let value = Tensor::from_vec(t.row(index).to_vec());
        Ok(self.push(Op::Row { matrix, index }, value))
    }

    /// Reshape to a flat vector; values are shared unchanged.
    pub fn flatten(&mut self, node: NodeId) -> NodeId {
        let value = Tensor::from_vec(self.value(node).values().to_vec());
        self.push(Op::Flatten(node), value)
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum_all(&mut self, node: NodeId) -> NodeId {
        let s: f64 = self.value(node).values().iter().sum();
        self.push(Op::SumAll(node), Tensor::scalar(s))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum_many(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        let first = nodes.first().ok_or(Error::EmptySequence)?;
        let shape = self.value(*first).shape().to_vec();
        let mut values = vec![0.0; self.value(*first).len()];
        for &n in nodes {
            let t = self.value(n);
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "sum_many",
                    detail: format!("{:?} vs {:?}", t.shape(), shape),
                });
            }
            for (acc, v) in values.iter_mut().zip(t.values()) {
                *acc += v;
            }
        }
        Ok(self.push(
            Op::SumMany(nodes.to_vec()),
            Tensor::new(shape, values).expect("shape"),
        ))
    }

    /// Mean of same-shaped nodes.
    pub fn mean_many(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        let sum = self.sum_many(nodes)?;
        Ok(self.scale(sum, 1.0 / nodes.len() as f64))
    }

    /// y = W.x + b.
    pub fn affine(
        &mut self,
        x: NodeId,
        weight: ParamId,
        bias: ParamId,
        params: &ParamSet,
    ) -> Result<NodeId> {
        let w = self.param(weight, params);
        let b = self.param(bias, params);
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Same-length temporal convolution over a `[T x d_in]` node with kernel
    /// `[w x d_in x d_out]` and bias `[d_out]`. The kernel width must be odd;
    /// the input is zero-padded by w/2 frames on each side.
    pub fn temporal_conv(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        if x.shape().len() != 2 || k.shape().len() != 3 {
            return Err(Error::Shape {
                op: "temporal_conv",
                detail: format!("input {:?}, kernel {:?}", x.shape(), k.shape()),
            });
        }
        let (steps, d_in) = (x.shape()[0], x.shape()[1]);
        let (width, k_in, d_out) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        if width % 2 == 0 {
            return Err(Error::Validation(format!(
                "temporal_conv kernel width must be odd, got {width}"
            )));
        }
        if k_in != d_in || b.len() != d_out {
            return Err(Error::Shape {
                op: "temporal_conv",
                detail: format!(
                    "input {:?} vs kernel {:?} vs bias {:?}",
                    x.shape(),
                    k.shape(),
                    b.shape()
                ),
            });
        }
        let half = width / 2;
        let mut out = vec![0.0; steps * d_out];
        let kv = k.values();
        let bv = b.values();
        for t in 0..steps {
            let row = &mut out[t * d_out..(t + 1) * d_out];
            row.copy_from_slice(bv);
            for j in 0..width {
                let src = t as isize + j as isize - half as isize;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let x_row = x.row(src as usize);
                let k_slice = &kv[j * d_in * d_out..(j + 1) * d_in * d_out];
                for (xi, k_row) in x_row.iter().zip(k_slice.chunks_exact(d_out)) {
                    for (o, kw) in row.iter_mut().zip(k_row) {
                        *o += xi * kw;
                    }
                }
            }
        }
        Ok(self.push(
            Op::TemporalConv {
                input,
                kernel,
                bias,
                width,
            },
            Tensor::new(vec![steps, d_out], out).expect("shape"),
        ))
    }

    /// Max pooling across the time axis of a `[T x d]` node. Window t' covers
    /// time steps [t'*stride, t'*stride + width) clipped to T; output length
    /// is ceil(T / stride).
    pub fn temporal_maxpool(
        &mut self,
        input: NodeId,
        width: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape().len() != 2 {
            return Err(Error::Shape {
                op: "temporal_maxpool",
                detail: format!("input {:?}", x.shape()),
            });
        }
        let (steps, d) = (x.shape()[0], x.shape()[1]);
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        if width < 1 || stride < 1 {
            return Err(Error::Validation(format!(
                "temporal_maxpool width {width} / stride {stride} must be >= 1"
            )));
        }
        let out_steps = steps.div_ceil(stride);
        let mut out = vec![0.0; out_steps * d];
        let mut argmax = vec![0u32; out_steps * d];
        for tp in 0..out_steps {
            let start = tp * stride;
            let end = (start + width).min(steps);
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = start;
                for t in start..end {
                    let v = x.values()[t * d + c];
                    if v > best {
                        best = v;
                        best_idx = t;
                    }
                }
                out[tp * d + c] = best;
                argmax[tp * d + c] = (best_idx * d + c) as u32;
            }
        }
        Ok(self.push(
            Op::TemporalMaxPool { input, argmax },
            Tensor::new(vec![out_steps, d], out).expect("shape"),
        ))
    }

    /// -log softmax(logits)[target], in stable log-sum-exp form.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if target >= l.len() {
            return Err(Error::Validation(format!(
                "softmax_cross_entropy target index {} out of range for {} classes",
                target,
                l.len()
            )));
        }
        let loss = log_sum_exp(l.values()) - l.values()[target];
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, target },
            Tensor::scalar(loss.max(0.0)),
        ))
    }

    /// Sum over classes of the per-class binary cross entropy between
    /// sigmoid(logit) and a one-hot target, in the stable form
    /// max(x,0) - x*t + log(1 + e^-|x|).
    pub fn sigmoid_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let l = self.value(logits);
        let t = self.value(target);
        if l.shape() != t.shape() {
            return Err(Error::Shape {
                op: "sigmoid_cross_entropy",
                detail: format!("logits {:?} vs target {:?}", l.shape(), t.shape()),
            });
        }
        validate_one_hot(t)?;
        let loss: f64 = l
            .values()
            .iter()
            .zip(t.values())
            .map(|(&x, &y)| x.max(0.0) - x * y + log1p_exp(-x.abs()))
            .sum();
        Ok(self.push(
            Op::SigmoidCrossEntropy { logits, target },
            Tensor::scalar(loss),
        ))
    }

    /// Propagate d(loss)/d(node) to every node and accumulate parameter
    /// adjoints additively into `params`.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward computation".into(),
            ));
        }
        let loss_idx = loss.0 as usize;
        if loss_idx >= self.nodes.len() {
            return Err(Error::State(format!(
                "backward: node {} does not exist",
                loss_idx
            )));
        }
        if !self.nodes[loss_idx].value.is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got {:?}",
                    self.nodes[loss_idx].value.shape()
                ),
            });
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss_idx] = Some(vec![1.0]);

        for idx in (0..=loss_idx).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => params.accumulate_grad(*pid, &adj),
                Op::MatVec { weight, vector } => {
                    let w = self.value(*weight);
                    let x = self.value(*vector);
                    let cols = w.shape()[1];
                    {
                        let dw = grad_slot(&mut adjoints, *weight, w.len());
                        for (gi, d_row) in adj.iter().zip(dw.chunks_exact_mut(cols)) {
                            for (d, xv) in d_row.iter_mut().zip(x.values()) {
                                *d += gi * xv;
                            }
                        }
                    }
                    {
                        let dx = grad_slot(&mut adjoints, *vector, x.len());
                        for (gi, w_row) in adj.iter().zip(w.values().chunks_exact(cols)) {
                            for (d, wv) in dx.iter_mut().zip(w_row) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, &adj, |g, _| g, &node.value);
                    accumulate(&mut adjoints, *b, &adj, |g, _| g, &node.value);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *a, &adj, |g, _| g, &node.value);
                    accumulate(&mut adjoints, *b, &adj, |g, _| -g, &node.value);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv: Vec<f64> = self.value(b).values().to_vec();
                    let av: Vec<f64> = self.value(a).values().to_vec();
                    let da = grad_slot(&mut adjoints, a, bv.len());
                    for ((d, g), y) in da.iter_mut().zip(&adj).zip(&bv) {
                        *d += g * y;
                    }
                    let db = grad_slot(&mut adjoints, b, av.len());
                    for ((d, g), x) in db.iter_mut().zip(&adj).zip(&av) {
                        *d += g * x;
                    }
                }
                Op::Scale { node: src, factor } => {
                    let f = *factor;
                    accumulate(&mut adjoints, *src, &adj, |g, _| g * f, &node.value);
                }
                Op::Sigmoid(src) => {
                    accumulate(
                        &mut adjoints,
                        *src,
                        &adj,
                        |g, y| g * y * (1.0 - y),
                        &node.value,
                    );
                }
                Op::Tanh(src) => {
                    accumulate(
                        &mut adjoints,
                        *src,
                        &adj,
                        |g, y| g * (1.0 - y * y),
                        &node.value,
                    );
                }
                Op::Relu(src) => {
                    accumulate(
                        &mut adjoints,
                        *src,
                        &adj,
                        |g, y| if y > 0.0 { g } else { 0.0 },
                        &node.value,
                    );
                }
                Op::Softmax(src) => {
                    let y = node.value.values();
                    let dot: f64 = adj.iter().zip(y).map(|(g, v)| g * v).sum();
                    let dx = grad_slot(&mut adjoints, *src, y.len());
                    for ((d, g), v) in dx.iter_mut().zip(&adj).zip(y) {
                        *d += v * (g - dot);
                    }
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let len_a = self.value(a).len();
                    let len_b = self.value(b).len();
                    let da = grad_slot(&mut adjoints, a, len_a);
                    for (d, g) in da.iter_mut().zip(&adj[..len_a]) {
                        *d += g;
                    }
                    let db = grad_slot(&mut adjoints, b, len_b);
                    for (d, g) in db.iter_mut().zip(&adj[len_a..]) {
                        *d += g;
                    }
                }
                Op::Row { matrix, index } => {
                    let cols = self.value(*matrix).cols();
                    let len = self.value(*matrix).len();
                    let dm = grad_slot(&mut adjoints, *matrix, len);
                    for (d, g) in dm[index * cols..(index + 1) * cols].iter_mut().zip(&adj) {
                        *d += g;
                    }
                }
                Op::Flatten(src) => {
                    let len = self.value(*src).len();
                    let ds = grad_slot(&mut adjoints, *src, len);
                    for (d, g) in ds.iter_mut().zip(&adj) {
                        *d += g;
                    }
                }
                Op::SumAll(src) => {
                    let g = adj[0];
                    let len = self.value(*src).len();
                    let ds = grad_slot(&mut adjoints, *src, len);
                    for d in ds.iter_mut() {
                        *d += g;
                    }
                }
                Op::SumMany(srcs) => {
                    for &s in srcs {
                        let len = self.value(s).len();
                        let ds = grad_slot(&mut adjoints, s, len);
                        for (d, g) in ds.iter_mut().zip(&adj) {
                            *d += g;
                        }
                    }
                }
                Op::TemporalConv {
                    input,
                    kernel,
                    bias,
                    width,
                } => {
                    self.backward_temporal_conv(
                        *input,
                        *kernel,
                        *bias,
                        *width,
                        &adj,
                        &mut adjoints,
                    );
                }
                Op::TemporalMaxPool { input, argmax } => {
                    let len = self.value(*input).len();
                    let dx = grad_slot(&mut adjoints, *input, len);
                    for (g, &src) in adj.iter().zip(argmax) {
                        dx[src as usize] += g;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let g = adj[0];
                    let probs = softmax_values(self.value(*logits));
                    let len = probs.len();
                    let dl = grad_slot(&mut adjoints, *logits, len);
                    for (i, (d, p)) in dl.iter_mut().zip(probs.values()).enumerate() {
                        let indicator = if i == *target { 1.0 } else { 0.0 };
                        *d += g * (p - indicator);
                    }
                }
                Op::SigmoidCrossEntropy { logits, target } => {
                    let g = adj[0];
                    let lv = self.value(*logits);
                    let tv: Vec<f64> = self.value(*target).values().to_vec();
                    let probs: Vec<f64> = lv.values().iter().map(|&v| sigmoid_scalar(v)).collect();
                    let dl = grad_slot(&mut adjoints, *logits, probs.len());
                    for ((d, p), t) in dl.iter_mut().zip(&probs).zip(&tv) {
                        *d += g * (p - t);
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_temporal_conv(
        &self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        width: usize,
        adj: &[f64],
        adjoints: &mut [Option<Vec<f64>>],
    ) {
        let x = self.value(input);
        let k = self.value(kernel);
        let (steps, d_in) = (x.shape()[0], x.shape()[1]);
        let d_out = k.shape()[2];
        let half = width / 2;

        {
            let db = grad_slot(adjoints, bias, d_out);
            for g_row in adj.chunks_exact(d_out) {
                for (d, g) in db.iter_mut().zip(g_row) {
                    *d += g;
                }
            }
        }
        {
            let dk = grad_slot(adjoints, kernel, k.len());
            for t in 0..steps {
                let g_row = &adj[t * d_out..(t + 1) * d_out];
                for j in 0..width {
                    let src = t as isize + j as isize - half as isize;
                    if src < 0 || src >= steps as isize {
                        continue;
                    }
                    let x_row = x.row(src as usize);
                    let dk_slice = &mut dk[j * d_in * d_out..(j + 1) * d_in * d_out];
                    for (xi, dk_row) in x_row.iter().zip(dk_slice.chunks_exact_mut(d_out)) {
                        for (d, g) in dk_row.iter_mut().zip(g_row) {
                            *d += xi * g;
                        }
                    }
                }
            }
        }
        {
            let kv = k.values();
            let dx = grad_slot(adjoints, input, x.len());
            for t in 0..steps {
                let g_row = &adj[t * d_out..(t + 1) * d_out];
                for j in 0..width {
                    let src = t as isize + j as isize - half as isize;
                    if src < 0 || src >= steps as isize {
                        continue;
                    }
                    let dx_row = &mut dx[src as usize * d_in..(src as usize + 1) * d_in];
                    let k_slice = &kv[j * d_in * d_out..(j + 1) * d_in * d_out];
                    for (d, k_row) in dx_row.iter_mut().zip(k_slice.chunks_exact(d_out)) {
                        *d += k_row.iter().zip(g_row).map(|(kw, g)| kw * g).sum::<f64>();
                    }
                }
            }
        }
    }
}

fn validate_one_hot(t: &Tensor) -> Result<()> {
    let ones = t.values().iter().filter(|&&v| v == 1.0).count();
    let zeros = t.values().iter().filter(|&&v| v == 0.0).count();
    if ones != 1 || ones + zeros != t.len() {
        return Err(Error::Validation(format!(
            "target is not one-hot: {:?}",
            t.values()
        )));
    }
    Ok(())
}

fn grad_slot(adjoints: &mut [Option<Vec<f64>>], node: NodeId, len: usize) -> &mut Vec<f64> {
    let slot = &mut adjoints[node.0 as usize];
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(
    adjoints: &mut [Option<Vec<f64>>],
    node: NodeId,
    adj: &[f64],
    f: impl Fn(f64, f64) -> f64,
    out_value: &Tensor,
) {
    let dst = grad_slot(adjoints, node, adj.len());
    for ((d, &g), &y) in dst.iter_mut().zip(adj).zip(out_value.values()) {
        *d += f(g, y);
    }
}
