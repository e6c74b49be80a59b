//! Reverse-mode autodiff tape over [`Tensor`] values.
//!
//! Nodes are appended in topological order, so backward is a single reverse
//! sweep. Binary elementwise ops allow the right operand to broadcast when
//! its shape is a suffix of the left shape (bias adds, per-row scales).

use super::kernels::{conv2d_3x3, conv2d_3x3_backward, for_each_lane, gemm_acc, transpose};
use super::Tensor;
use crate::error::{DmtError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScalarMul { a: NodeId, c: f64 },
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Conv2d { x: NodeId, w: NodeId },
    Relu { a: NodeId },
    Mean { a: NodeId, axis: Option<usize> },
    Sum { a: NodeId, axis: Option<usize> },
    Exp { a: NodeId },
    Log { a: NodeId },
    L2Normalize { a: NodeId, axis: usize },
    Softmax { a: NodeId, axis: usize },
    LogSoftmax { a: NodeId, axis: usize },
    Reshape { a: NodeId },
    Slice { a: NodeId, axis: usize, start: usize, len: usize },
    Concat { items: Vec<NodeId>, axis: usize },
    BceWithLogits { logits: NodeId, target: Tensor },
}

struct NodeRec {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Computation tape. One graph per training step; build forward, call
/// [`Graph::backward`] once, read gradients off the leaves.
pub struct Graph {
    nodes: Vec<NodeRec>,
    backward_run: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_run: false,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(NodeRec {
            value,
            grad: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- shape helpers -------------------------------------------------

    fn suffix_broadcast_ok(big: &[usize], small: &[usize]) -> bool {
        small.len() <= big.len() && big[big.len() - small.len()..] == *small
    }

    fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
        if axis >= shape.len() {
            return Err(DmtError::InvalidShape {
                op,
                shape: shape.to_vec(),
                msg: format!("axis {} out of range", axis),
            });
        }
        Ok(())
    }

    // ---- forward ops ---------------------------------------------------

    /// Elementwise add; `b` may broadcast if its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if !Self::suffix_broadcast_ok(&sa, &sb) {
            return Err(DmtError::ShapeMismatch { op: "add", lhs: sa, rhs: sb });
        }
        let bn = self.value(b).numel().max(1);
        let bd = self.value(b).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % bn])
            .collect();
        let value = Tensor::new(sa, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Elementwise multiply; same broadcast rule as [`Graph::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if !Self::suffix_broadcast_ok(&sa, &sb) {
            return Err(DmtError::ShapeMismatch { op: "mul", lhs: sa, rhs: sb });
        }
        let bn = self.value(b).numel().max(1);
        let bd = self.value(b).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * bd[i % bn])
            .collect();
        let value = Tensor::new(sa, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        Ok(self.push(value, Op::ScalarMul { a, c }, needs))
    }

    /// Matrix multiply with optional transposes on the trailing two dims.
    /// Operands may carry one leading batch dim; a 2-D operand broadcasts
    /// across the other side's batch.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let dims = MatDims::resolve(&sa, &sb, ta, tb)?;
        let value = {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            dims.forward(ad, bd)?
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, needs))
    }

    /// 3x3 stride-1 same-padding convolution: x (N,H,W,Ci) * w (3,3,Ci,Co).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 4 {
            return Err(DmtError::InvalidShape {
                op: "conv2d",
                shape: sx,
                msg: "input must be (N,H,W,Ci)".into(),
            });
        }
        if sw.len() != 4 || sw[0] != 3 || sw[1] != 3 || sw[2] != sx[3] {
            return Err(DmtError::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sw });
        }
        let (n, h, wd, ci, co) = (sx[0], sx[1], sx[2], sx[3], sw[3]);
        let data = conv2d_3x3(self.value(x).data(), self.value(w).data(), n, h, wd, ci, co);
        let value = Tensor::new(vec![n, h, wd, co], data)?;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::Conv2d { x, w }, needs))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        Ok(self.push(value, Op::Relu { a }, needs))
    }

    /// Mean over the whole tensor (`axis=None`, scalar result) or one axis.
    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let value = self.reduce_value("mean", a, axis, true)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Mean { a, axis }, needs))
    }

    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let value = self.reduce_value("sum", a, axis, false)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Sum { a, axis }, needs))
    }

    fn reduce_value(&self, op: &'static str, a: NodeId, axis: Option<usize>, mean: bool) -> Result<Tensor> {
        let t = self.value(a);
        match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                let v = if mean { s / t.numel() as f64 } else { s };
                Ok(Tensor::scalar(v))
            }
            Some(ax) => {
                Self::check_axis(op, t.shape(), ax)?;
                let mut out_shape = t.shape().to_vec();
                let len = out_shape.remove(ax);
                let mut out = vec![0.0; t.numel() / len];
                let mut idx = 0;
                for_each_lane(t.shape(), ax, |start, stride, l| {
                    let mut s = 0.0;
                    for i in 0..l {
                        s += t.data()[start + i * stride];
                    }
                    out[idx] = if mean { s / l as f64 } else { s };
                    idx += 1;
                });
                Tensor::new(out_shape, out)
            }
        }
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::exp);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Exp { a }, needs))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if !t.is_finite() {
            return Err(DmtError::NonFinite { op: "log" });
        }
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(DmtError::domain("log", "non-positive input"));
        }
        let value = t.map(f64::ln);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Log { a }, needs))
    }

    /// Normalize lanes along `axis` to unit Euclidean norm. Zero lanes map
    /// to zero (and get zero gradient).
    pub fn l2_normalize(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(a);
        Self::check_axis("l2_normalize", t.shape(), axis)?;
        let mut out = t.data().to_vec();
        for_each_lane(t.shape(), axis, |start, stride, len| {
            let mut sq = 0.0;
            for i in 0..len {
                sq += t.data()[start + i * stride].powi(2);
            }
            let r = sq.sqrt().max(NORM_EPS);
            for i in 0..len {
                out[start + i * stride] /= r;
            }
        });
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::L2Normalize { a, axis }, needs))
    }

    /// Max-subtracted softmax along `axis`. Errors on non-finite input.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(a);
        Self::check_axis("softmax", t.shape(), axis)?;
        if !t.is_finite() {
            return Err(DmtError::NonFinite { op: "softmax" });
        }
        let mut out = vec![0.0; t.numel()];
        for_each_lane(t.shape(), axis, |start, stride, len| {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..len {
                mx = mx.max(t.data()[start + i * stride]);
            }
            let mut z = 0.0;
            for i in 0..len {
                let e = (t.data()[start + i * stride] - mx).exp();
                out[start + i * stride] = e;
                z += e;
            }
            for i in 0..len {
                out[start + i * stride] /= z;
            }
        });
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax { a, axis }, needs))
    }

    /// log(softmax(x)) computed via log-sum-exp for stability.
    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(a);
        Self::check_axis("log_softmax", t.shape(), axis)?;
        if !t.is_finite() {
            return Err(DmtError::NonFinite { op: "log_softmax" });
        }
        let mut out = vec![0.0; t.numel()];
        for_each_lane(t.shape(), axis, |start, stride, len| {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..len {
                mx = mx.max(t.data()[start + i * stride]);
            }
            let mut z = 0.0;
            for i in 0..len {
                z += (t.data()[start + i * stride] - mx).exp();
            }
            let lse = mx + z.ln();
            for i in 0..len {
                out[start + i * stride] = t.data()[start + i * stride] - lse;
            }
        });
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::LogSoftmax { a, axis }, needs))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(DmtError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                msg: format!("cannot reshape {} elements", t.numel()),
            });
        }
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape { a }, needs))
    }

    /// Take `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        Self::check_axis("slice", t.shape(), axis)?;
        let ax_len = t.shape()[axis];
        if start + len > ax_len || len == 0 {
            return Err(DmtError::InvalidShape {
                op: "slice",
                shape: t.shape().to_vec(),
                msg: format!("range {}..{} out of axis length {}", start, start + len, ax_len),
            });
        }
        let outer: usize = t.shape()[..axis].iter().product();
        let inner: usize = t.shape()[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ax_len + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Slice { a, axis, start, len }, needs))
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&mut self, items: &[NodeId], axis: usize) -> Result<NodeId> {
        if items.is_empty() {
            return Err(DmtError::domain("concat", "empty input list"));
        }
        let first = self.value(items[0]).shape().to_vec();
        Self::check_axis("concat", &first, axis)?;
        let mut total_axis = 0;
        for &it in items {
            let s = self.value(it).shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(DmtError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total_axis += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = total_axis;
        let mut out = vec![0.0; outer * total_axis * inner];
        for o in 0..outer {
            let mut off = 0;
            for &it in items {
                let t = self.value(it);
                let al = t.shape()[axis];
                let src = &t.data()[o * al * inner..(o + 1) * al * inner];
                let dst_base = (o * total_axis + off) * inner;
                out[dst_base..dst_base + al * inner].copy_from_slice(src);
                off += al;
            }
        }
        let value = Tensor::new(shape, out)?;
        let needs = items.iter().any(|&it| self.needs(it));
        Ok(self.push(
            value,
            Op::Concat {
                items: items.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Mean binary cross-entropy of `logits` against a fixed binary target,
    /// computed in the numerically safe form
    /// `max(z,0) - z*t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(DmtError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: z.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        if target.data().iter().any(|&t| t != 0.0 && t != 1.0) {
            return Err(DmtError::domain("bce_with_logits", "target must be binary"));
        }
        let mut acc = 0.0;
        for (&zv, &tv) in z.data().iter().zip(target.data()) {
            acc += zv.max(0.0) - zv * tv + (-zv.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(acc / z.numel() as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            Op::BceWithLogits {
                logits,
                target: target.clone(),
            },
            needs,
        ))
    }

    // ---- backward ------------------------------------------------------

    fn accumulate(&mut self, id: NodeId, delta: &[f64]) {
        let rec = &mut self.nodes[id.0];
        if !rec.needs_grad {
            return;
        }
        let grad = rec
            .grad
            .get_or_insert_with(|| Tensor::zeros(rec.value.shape()));
        for (g, &d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Reverse sweep from a scalar loss. Populates gradients on every
    /// reachable node with `needs_grad`. A second call without a fresh graph
    /// is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_run {
            return Err(DmtError::domain("backward", "backward already run on this graph"));
        }
        if self.value(loss).numel() != 1 {
            return Err(DmtError::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.backward_run = true;
        let ones = Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?;
        self.nodes[loss.0].grad = Some(ones);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let grad = self.nodes[i].grad.as_ref().unwrap().data().to_vec();
            self.backprop_one(NodeId(i), &op, &grad)?;
        }
        Ok(())
    }

    fn backprop_one(&mut self, node: NodeId, op: &Op, g: &[f64]) -> Result<()> {
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Add { a, b } => {
                self.accumulate(a, g);
                if self.needs(b) {
                    let bn = self.value(b).numel();
                    let mut db = vec![0.0; bn];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % bn] += gv;
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Mul { a, b } => {
                let bn = self.value(b).numel();
                if self.needs(a) {
                    let bd = self.value(b).data();
                    let da: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * bd[i % bn]).collect();
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let ad = self.value(a).data();
                    let mut db = vec![0.0; bn];
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % bn] += gv * ad[i];
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::ScalarMul { a, c } => {
                let da: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                self.accumulate(a, &da);
            }
            Op::MatMul { a, b, ta, tb } => {
                let sa = self.value(a).shape().to_vec();
                let sb = self.value(b).shape().to_vec();
                let dims = MatDims::resolve(&sa, &sb, ta, tb)?;
                let (da, db) = dims.backward(self.value(a).data(), self.value(b).data(), g);
                if self.needs(a) {
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    self.accumulate(b, &db);
                }
            }
            Op::Conv2d { x, w } => {
                let sx = self.value(x).shape().to_vec();
                let co = self.value(w).shape()[3];
                let (n, h, wd, ci) = (sx[0], sx[1], sx[2], sx[3]);
                let (dx, dw) =
                    conv2d_3x3_backward(self.value(x).data(), self.value(w).data(), g, n, h, wd, ci, co);
                if self.needs(x) {
                    self.accumulate(x, &dx);
                }
                if self.needs(w) {
                    self.accumulate(w, &dw);
                }
            }
            Op::Relu { a } => {
                let ad = self.value(a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(ad)
                    .map(|(&gv, &av)| if av > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Mean { a, axis } => {
                let t_shape = self.value(a).shape().to_vec();
                let numel = self.value(a).numel();
                match axis {
                    None => {
                        let gv = g[0] / numel as f64;
                        let da = vec![gv; numel];
                        self.accumulate(a, &da);
                    }
                    Some(ax) => {
                        let mut da = vec![0.0; numel];
                        let mut idx = 0;
                        for_each_lane(&t_shape, ax, |start, stride, len| {
                            let gv = g[idx] / len as f64;
                            for i in 0..len {
                                da[start + i * stride] += gv;
                            }
                            idx += 1;
                        });
                        self.accumulate(a, &da);
                    }
                }
            }
            Op::Sum { a, axis } => {
                let t_shape = self.value(a).shape().to_vec();
                let numel = self.value(a).numel();
                match axis {
                    None => {
                        let da = vec![g[0]; numel];
                        self.accumulate(a, &da);
                    }
                    Some(ax) => {
                        let mut da = vec![0.0; numel];
                        let mut idx = 0;
                        for_each_lane(&t_shape, ax, |start, stride, len| {
                            for i in 0..len {
                                da[start + i * stride] += g[idx];
                            }
                            idx += 1;
                        });
                        self.accumulate(a, &da);
                    }
                }
            }
            Op::Exp { a } => {
                let yd = self.value(node).data();
                let da: Vec<f64> = g.iter().zip(yd).map(|(&gv, &yv)| gv * yv).collect();
                self.accumulate(a, &da);
            }
            Op::Log { a } => {
                let ad = self.value(a).data();
                let da: Vec<f64> = g.iter().zip(ad).map(|(&gv, &av)| gv / av).collect();
                self.accumulate(a, &da);
            }
            Op::L2Normalize { a, axis } => {
                let x = self.value(a);
                let y = self.value(node);
                let shape = x.shape().to_vec();
                let mut da = vec![0.0; x.numel()];
                {
                    let xd = x.data();
                    let yd = y.data();
                    for_each_lane(&shape, axis, |start, stride, len| {
                        let mut sq = 0.0;
                        let mut gy = 0.0;
                        for i in 0..len {
                            let k = start + i * stride;
                            sq += xd[k] * xd[k];
                            gy += g[k] * yd[k];
                        }
                        let r = sq.sqrt();
                        if r <= NORM_EPS {
                            // zero lane: treat as constant zero output
                            return;
                        }
                        for i in 0..len {
                            let k = start + i * stride;
                            da[k] = (g[k] - yd[k] * gy) / r;
                        }
                    });
                }
                self.accumulate(a, &da);
            }
            Op::Softmax { a, axis } => {
                let y = self.value(node);
                let shape = y.shape().to_vec();
                let mut da = vec![0.0; y.numel()];
                {
                    let yd = y.data();
                    for_each_lane(&shape, axis, |start, stride, len| {
                        let mut dot = 0.0;
                        for i in 0..len {
                            let k = start + i * stride;
                            dot += g[k] * yd[k];
                        }
                        for i in 0..len {
                            let k = start + i * stride;
                            da[k] = yd[k] * (g[k] - dot);
                        }
                    });
                }
                self.accumulate(a, &da);
            }
            Op::LogSoftmax { a, axis } => {
                let y = self.value(node);
                let shape = y.shape().to_vec();
                let mut da = vec![0.0; y.numel()];
                {
                    let yd = y.data();
                    for_each_lane(&shape, axis, |start, stride, len| {
                        let mut gsum = 0.0;
                        for i in 0..len {
                            gsum += g[start + i * stride];
                        }
                        for i in 0..len {
                            let k = start + i * stride;
                            da[k] = g[k] - yd[k].exp() * gsum;
                        }
                    });
                }
                self.accumulate(a, &da);
            }
            Op::Reshape { a } => {
                self.accumulate(a, g);
            }
            Op::Slice { a, axis, start, len } => {
                let t_shape = self.value(a).shape().to_vec();
                let ax_len = t_shape[axis];
                let outer: usize = t_shape[..axis].iter().product();
                let inner: usize = t_shape[axis + 1..].iter().product();
                let mut da = vec![0.0; self.value(a).numel()];
                for o in 0..outer {
                    let dst = (o * ax_len + start) * inner;
                    let src = o * len * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(a, &da);
            }
            Op::Concat { ref items, axis } => {
                let out_shape = self.value(node).shape().to_vec();
                let total_axis = out_shape[axis];
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let mut off = 0;
                for &it in items {
                    let al = self.value(it).shape()[axis];
                    if self.needs(it) {
                        let mut di = vec![0.0; self.value(it).numel()];
                        for o in 0..outer {
                            let src = (o * total_axis + off) * inner;
                            let dst = o * al * inner;
                            di[dst..dst + al * inner].copy_from_slice(&g[src..src + al * inner]);
                        }
                        self.accumulate(it, &di);
                    }
                    off += al;
                }
            }
            Op::BceWithLogits { logits, ref target } => {
                let z = self.value(logits);
                let n = z.numel() as f64;
                let da: Vec<f64> = z
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&zv, &tv)| {
                        let sig = 1.0 / (1.0 + (-zv).exp());
                        g[0] * (sig - tv) / n
                    })
                    .collect();
                self.accumulate(logits, &da);
            }
        }
        Ok(())
    }
}

/// Resolved matmul geometry: effective (batch, m, k, n) plus operand layout.
struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
    ta: bool,
    tb: bool,
}

impl MatDims {
    fn resolve(sa: &[usize], sb: &[usize], ta: bool, tb: bool) -> Result<MatDims> {
        let mismatch = || DmtError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        let (a_batch, ar, ac) = match sa.len() {
            2 => (None, sa[0], sa[1]),
            3 => (Some(sa[0]), sa[1], sa[2]),
            _ => return Err(mismatch()),
        };
        let (b_batch, br, bc) = match sb.len() {
            2 => (None, sb[0], sb[1]),
            3 => (Some(sb[0]), sb[1], sb[2]),
            _ => return Err(mismatch()),
        };
        let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k1 != k2 {
            return Err(mismatch());
        }
        let batch = match (a_batch, b_batch) {
            (Some(x), Some(y)) if x == y => x,
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => 1,
            _ => return Err(mismatch()),
        };
        Ok(MatDims {
            batch,
            m,
            k: k1,
            n,
            a_batched: a_batch.is_some(),
            b_batched: b_batch.is_some(),
            ta,
            tb,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.a_batched || self.b_batched {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }

    fn forward(&self, a: &[f64], b: &[f64]) -> Result<Tensor> {
        let mut out = vec![0.0; self.batch * self.m * self.n];
        let a_sz = self.m * self.k;
        let b_sz = self.k * self.n;
        for bi in 0..self.batch {
            let a_base = if self.a_batched { bi * a_sz } else { 0 };
            let b_base = if self.b_batched { bi * b_sz } else { 0 };
            let a_eff: std::borrow::Cow<[f64]> = if self.ta {
                std::borrow::Cow::Owned(transpose(&a[a_base..a_base + a_sz], self.k, self.m))
            } else {
                std::borrow::Cow::Borrowed(&a[a_base..a_base + a_sz])
            };
            let b_eff: std::borrow::Cow<[f64]> = if self.tb {
                std::borrow::Cow::Owned(transpose(&b[b_base..b_base + b_sz], self.n, self.k))
            } else {
                std::borrow::Cow::Borrowed(&b[b_base..b_base + b_sz])
            };
            gemm_acc(
                &a_eff,
                &b_eff,
                &mut out[bi * self.m * self.n..(bi + 1) * self.m * self.n],
                self.m,
                self.k,
                self.n,
            );
        }
        Tensor::new(self.out_shape(), out)
    }

    /// dA' = dC * B'^T ; dB' = A'^T * dC, mapped back through the transpose
    /// flags. Unbatched operands accumulate across the batch.
    fn backward(&self, a: &[f64], b: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a_sz = self.m * self.k;
        let b_sz = self.k * self.n;
        let g_sz = self.m * self.n;
        let mut da = vec![0.0; a.len()];
        let mut db = vec![0.0; b.len()];
        for bi in 0..self.batch {
            let a_base = if self.a_batched { bi * a_sz } else { 0 };
            let b_base = if self.b_batched { bi * b_sz } else { 0 };
            let g_bi = &g[bi * g_sz..(bi + 1) * g_sz];
            let a_eff: Vec<f64> = if self.ta {
                transpose(&a[a_base..a_base + a_sz], self.k, self.m)
            } else {
                a[a_base..a_base + a_sz].to_vec()
            };
            let b_eff: Vec<f64> = if self.tb {
                transpose(&b[b_base..b_base + b_sz], self.n, self.k)
            } else {
                b[b_base..b_base + b_sz].to_vec()
            };
            // dA' (m,k) = g (m,n) * B'^T (n,k)
            let bt = transpose(&b_eff, self.k, self.n);
            let mut da_eff = vec![0.0; a_sz];
            gemm_acc(g_bi, &bt, &mut da_eff, self.m, self.n, self.k);
            // dB' (k,n) = A'^T (k,m) * g (m,n)
            let at = transpose(&a_eff, self.m, self.k);
            let mut db_eff = vec![0.0; b_sz];
            gemm_acc(&at, g_bi, &mut db_eff, self.k, self.m, self.n);

            let da_final = if self.ta {
                transpose(&da_eff, self.m, self.k)
            } else {
                da_eff
            };
            let db_final = if self.tb {
                transpose(&db_eff, self.k, self.n)
            } else {
                db_eff
            };
            for (dst, src) in da[a_base..a_base + a_sz].iter_mut().zip(&da_final) {
                *dst += src;
            }
            for (dst, src) in db[b_base..b_base + b_sz].iter_mut().zip(&db_final) {
                *dst += src;
            }
        }
        (da, db)
    }
}
