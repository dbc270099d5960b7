//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations in creation order; nodes are addressed by
//! [`NodeId`]. `backward` walks the tape in reverse, accumulating gradients
//! into every node that requires them. Parameters enter a graph through
//! [`Graph::param`], which tags the leaf with its [`ParamId`] so gradients
//! can be collected per parameter afterwards.
//!
//! Every operation validates shapes and checks its output for non-finite
//! values; NaN/Inf anywhere is an error, not a silent state.

use crate::error::{Error, Result};

use super::store::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[n, d] + [1, d]`, the bias pattern.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[n, d] * [1, d]`, the gain pattern.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[n, d] * [n, 1]`, per-row scalar gates.
    ScaleRows(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Row-wise softmax of a matrix.
    Softmax(NodeId),
    /// Row-wise layer normalization (no affine part).
    LayerNorm(NodeId, f64),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
        reduction: Reduction,
    },
    Concat {
        axis: usize,
        parts: Vec<NodeId>,
    },
    GatherRows {
        src: NodeId,
        indices: Vec<usize>,
    },
    SliceCols {
        src: NodeId,
        start: usize,
        end: usize,
    },
    Transpose(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
    param: Option<ParamId>,
}

pub struct Graph {
    nodes: Vec<Node>,
    trainable: bool,
}

impl Graph {
    /// A graph that tracks gradients for parameters.
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            trainable: true,
        }
    }

    /// A forward-only graph: parameters enter as plain constants.
    pub fn inference() -> Graph {
        Graph {
            nodes: Vec::new(),
            trainable: false,
        }
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

    fn push_op(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a constant leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input leaf that accumulates a gradient (for gradient checks
    /// of functions of data rather than parameters).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a parameter leaf. In an inference graph this is a constant.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.value(id).clone();
        let requires_grad = self.trainable;
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
            param: requires_grad.then_some(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push_op("matmul", value, Op::Matmul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), |x, y| x + y).map_err(|_| {
            Error::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            }
        })?;
        self.push_op("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if !xv.is_matrix() || !bv.is_matrix() || bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for c in 0..cols {
                let v = out.at(r, c) + bv.at(0, c);
                out.set(r, c, v);
            }
        }
        self.push_op("add_row", out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y).map_err(|_| {
            Error::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            }
        })?;
        self.push_op("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_row(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let (xv, gv) = (self.value(x), self.value(gain));
        if !xv.is_matrix() || !gv.is_matrix() || gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "mul_row",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for c in 0..cols {
                let v = out.at(r, c) * gv.at(0, c);
                out.set(r, c, v);
            }
        }
        self.push_op("mul_row", out, Op::MulRow(x, gain), &[x, gain])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * s);
        self.push_op("scale", value, Op::Scale(a, s), &[a])
    }

    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (xv, sv) = (self.value(x), self.value(s));
        if !xv.is_matrix() || !sv.is_matrix() || sv.cols() != 1 || sv.rows() != xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: xv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let f = sv.at(r, 0);
            for c in 0..out.cols() {
                let v = out.at(r, c) * f;
                out.set(r, c, v);
            }
        }
        self.push_op("scale_rows", out, Op::ScaleRows(x, s), &[x, s])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_op("relu", value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push_op("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.tanh());
        self.push_op("tanh", value, Op::Tanh(a), &[a])
    }

    /// Numerically stable softmax along the last axis of a matrix.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: av.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            softmax_row_in_place(&mut out, r);
        }
        self.push_op("softmax", out, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: av.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut out = av.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let row = out.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let denom = (var + eps).sqrt();
            for c in 0..cols {
                let v = (out.at(r, c) - mean) / denom;
                out.set(r, c, v);
            }
        }
        self.push_op("layer_norm", out, Op::LayerNorm(a, eps), &[a])
    }

    /// Negative log-likelihood of per-row targets under row-wise softmax.
    /// Masked-out rows are ignored; with `Reduction::Mean` the loss averages
    /// over unmasked rows (zero when there are none).
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        mask: Option<&[bool]>,
        reduction: Reduction,
    ) -> Result<NodeId> {
        let lv = self.value(logits);
        if !lv.is_matrix() || lv.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mask: Vec<bool> = match mask {
            Some(m) => {
                if m.len() != targets.len() {
                    return Err(Error::ShapeMismatch {
                        op: "cross_entropy",
                        lhs: vec![m.len()],
                        rhs: vec![targets.len()],
                    });
                }
                m.to_vec()
            }
            None => vec![true; targets.len()],
        };
        let cols = lv.cols();
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, (&t, &keep)) in targets.iter().zip(&mask).enumerate() {
            if !keep {
                continue;
            }
            if t >= cols {
                return Err(Error::InvalidArgument(format!(
                    "cross_entropy target {t} out of range for {cols} classes"
                )));
            }
            let row = lv.row_slice(r);
            total += log_sum_exp(row) - row[t];
            count += 1;
        }
        let loss = match reduction {
            Reduction::Mean => {
                if count == 0 {
                    0.0
                } else {
                    total / count as f64
                }
            }
            Reduction::Sum => total,
        };
        self.push_op(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask,
                reduction,
            },
            &[logits],
        )
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero parts".into()));
        }
        let first = self.value(parts[0]);
        if !first.is_matrix() || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let (mut rows, mut cols) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let v = self.value(p);
            if axis == 0 {
                if v.cols() != cols {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: vec![rows, cols],
                        rhs: v.shape().to_vec(),
                    });
                }
                rows += v.rows();
            } else {
                if v.rows() != rows {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: vec![rows, cols],
                        rhs: v.shape().to_vec(),
                    });
                }
                cols += v.cols();
            }
        }
        if axis == 0 {
            rows = parts.iter().map(|&p| self.value(p).rows()).sum();
        }
        let mut out = Tensor::zeros(&[rows, cols]);
        if axis == 0 {
            let mut r0 = 0;
            for &p in parts {
                let v = self.value(p);
                for r in 0..v.rows() {
                    for c in 0..cols {
                        out.set(r0 + r, c, v.at(r, c));
                    }
                }
                r0 += v.rows();
            }
        } else {
            let mut c0 = 0;
            for &p in parts {
                let v = self.value(p);
                for r in 0..rows {
                    for c in 0..v.cols() {
                        out.set(r, c0 + c, v.at(r, c));
                    }
                }
                c0 += v.cols();
            }
        }
        self.push_op(
            "concat",
            out,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            parts,
        )
    }

    /// Select rows of `src` by index; indices may repeat. This is also the
    /// embedding lookup (src = embedding table).
    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> Result<NodeId> {
        let sv = self.value(src);
        if !sv.is_matrix() {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: sv.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let cols = sv.cols();
        let mut out = Tensor::zeros(&[indices.len(), cols]);
        for (r, &idx) in indices.iter().enumerate() {
            if idx >= sv.rows() {
                return Err(Error::InvalidArgument(format!(
                    "gather_rows index {idx} out of range for {} rows",
                    sv.rows()
                )));
            }
            for c in 0..cols {
                out.set(r, c, sv.at(idx, c));
            }
        }
        self.push_op(
            "gather_rows",
            out,
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
            &[src],
        )
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if !sv.is_matrix() || start >= end || end > sv.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: sv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut out = Tensor::zeros(&[sv.rows(), end - start]);
        for r in 0..sv.rows() {
            for c in start..end {
                out.set(r, c - start, sv.at(r, c));
            }
        }
        self.push_op("slice_cols", out, Op::SliceCols { src, start, end }, &[src])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose();
        self.push_op("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_op("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len().max(1) as f64;
        let value = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        self.push_op("mean", value, Op::Mean(a), &[a])
    }

    // ---- backward ----------------------------------------------------

    fn accumulate(&mut self, id: NodeId, delta: &Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let node = &mut self.nodes[id.0];
        match node.grad.as_mut() {
            Some(g) => g.add_assign(delta),
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse pass from a length-one root. Gradients accumulate into every
    /// node with `requires_grad`, and can afterwards be collected per
    /// parameter with [`Graph::param_grads`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let seed = Tensor::from_vec(self.value(root).shape(), vec![1.0])?;
        self.nodes[root.0].grad = Some(seed);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let grad = self.nodes[idx].grad.clone().unwrap();
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let bt = self.value(b).transpose();
                    let da = grad.matmul(&bt)?;
                    self.accumulate(a, &da);
                    let at = self.value(a).transpose();
                    let db = at.matmul(&grad)?;
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AddRow(x, bias) => {
                    self.accumulate(x, &grad);
                    let cols = grad.cols();
                    let mut db = Tensor::zeros(&[1, cols]);
                    for r in 0..grad.rows() {
                        for c in 0..cols {
                            let v = db.at(0, c) + grad.at(r, c);
                            db.set(0, c, v);
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Mul(a, b) => {
                    let da = grad.zip(self.value(b), |g, y| g * y)?;
                    self.accumulate(a, &da);
                    let db = grad.zip(self.value(a), |g, x| g * x)?;
                    self.accumulate(b, &db);
                }
                Op::MulRow(x, gain) => {
                    let gv = self.value(gain).clone();
                    let xv = self.value(x).clone();
                    let mut dx = grad.clone();
                    for r in 0..dx.rows() {
                        for c in 0..dx.cols() {
                            let v = dx.at(r, c) * gv.at(0, c);
                            dx.set(r, c, v);
                        }
                    }
                    self.accumulate(x, &dx);
                    let mut dg = Tensor::zeros(&[1, gv.cols()]);
                    for r in 0..grad.rows() {
                        for c in 0..grad.cols() {
                            let v = dg.at(0, c) + grad.at(r, c) * xv.at(r, c);
                            dg.set(0, c, v);
                        }
                    }
                    self.accumulate(gain, &dg);
                }
                Op::Scale(a, s) => {
                    let da = grad.map(|g| g * s);
                    self.accumulate(a, &da);
                }
                Op::ScaleRows(x, s) => {
                    let sv = self.value(s).clone();
                    let xv = self.value(x).clone();
                    let mut dx = grad.clone();
                    for r in 0..dx.rows() {
                        let f = sv.at(r, 0);
                        for c in 0..dx.cols() {
                            let v = dx.at(r, c) * f;
                            dx.set(r, c, v);
                        }
                    }
                    self.accumulate(x, &dx);
                    let mut ds = Tensor::zeros(&[xv.rows(), 1]);
                    for r in 0..grad.rows() {
                        let mut acc = 0.0;
                        for c in 0..grad.cols() {
                            acc += grad.at(r, c) * xv.at(r, c);
                        }
                        ds.set(r, 0, acc);
                    }
                    self.accumulate(s, &ds);
                }
                Op::Relu(a) => {
                    let da = grad.zip(self.value(a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                    self.accumulate(a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[idx].value.clone();
                    let da = grad.zip(&y, |g, y| g * y * (1.0 - y))?;
                    self.accumulate(a, &da);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[idx].value.clone();
                    let da = grad.zip(&y, |g, y| g * (1.0 - y * y))?;
                    self.accumulate(a, &da);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[idx].value.clone();
                    let mut da = Tensor::zeros(&[y.rows(), y.cols()]);
                    for r in 0..y.rows() {
                        let mut dot = 0.0;
                        for c in 0..y.cols() {
                            dot += grad.at(r, c) * y.at(r, c);
                        }
                        for c in 0..y.cols() {
                            da.set(r, c, y.at(r, c) * (grad.at(r, c) - dot));
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm(a, eps) => {
                    let xv = self.value(a).clone();
                    let cols = xv.cols() as f64;
                    let mut da = Tensor::zeros(&[xv.rows(), xv.cols()]);
                    for r in 0..xv.rows() {
                        let row = xv.row_slice(r);
                        let mean = row.iter().sum::<f64>() / cols;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
                        let denom = (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / denom).collect();
                        let gmean = (0..xhat.len()).map(|c| grad.at(r, c)).sum::<f64>() / cols;
                        let gx = (0..xhat.len())
                            .map(|c| grad.at(r, c) * xhat[c])
                            .sum::<f64>()
                            / cols;
                        for c in 0..xhat.len() {
                            let v = (grad.at(r, c) - gmean - xhat[c] * gx) / denom;
                            da.set(r, c, v);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                    reduction,
                } => {
                    let g = grad.item();
                    let lv = self.value(logits).clone();
                    let count = mask.iter().filter(|&&m| m).count().max(1);
                    let w = match reduction {
                        Reduction::Mean => g / count as f64,
                        Reduction::Sum => g,
                    };
                    let mut da = Tensor::zeros(&[lv.rows(), lv.cols()]);
                    for (r, (&t, &keep)) in targets.iter().zip(&mask).enumerate() {
                        if !keep {
                            continue;
                        }
                        let row = lv.row_slice(r);
                        let probs = softmax_slice(row);
                        for c in 0..probs.len() {
                            let delta = if c == t { 1.0 } else { 0.0 };
                            da.set(r, c, (probs[c] - delta) * w);
                        }
                    }
                    self.accumulate(logits, &da);
                }
                Op::Concat { axis, parts } => {
                    if axis == 0 {
                        let mut r0 = 0;
                        for p in parts {
                            let (pr, pc) = {
                                let v = self.value(p);
                                (v.rows(), v.cols())
                            };
                            let mut dp = Tensor::zeros(&[pr, pc]);
                            for r in 0..pr {
                                for c in 0..pc {
                                    dp.set(r, c, grad.at(r0 + r, c));
                                }
                            }
                            self.accumulate(p, &dp);
                            r0 += pr;
                        }
                    } else {
                        let mut c0 = 0;
                        for p in parts {
                            let (pr, pc) = {
                                let v = self.value(p);
                                (v.rows(), v.cols())
                            };
                            let mut dp = Tensor::zeros(&[pr, pc]);
                            for r in 0..pr {
                                for c in 0..pc {
                                    dp.set(r, c, grad.at(r, c0 + c));
                                }
                            }
                            self.accumulate(p, &dp);
                            c0 += pc;
                        }
                    }
                }
                Op::GatherRows { src, indices } => {
                    let (sr, sc) = {
                        let v = self.value(src);
                        (v.rows(), v.cols())
                    };
                    let mut ds = Tensor::zeros(&[sr, sc]);
                    for (r, &idx) in indices.iter().enumerate() {
                        for c in 0..sc {
                            let v = ds.at(idx, c) + grad.at(r, c);
                            ds.set(idx, c, v);
                        }
                    }
                    self.accumulate(src, &ds);
                }
                Op::SliceCols { src, start, end } => {
                    let (sr, sc) = {
                        let v = self.value(src);
                        (v.rows(), v.cols())
                    };
                    let mut ds = Tensor::zeros(&[sr, sc]);
                    for r in 0..sr {
                        for c in start..end {
                            ds.set(r, c, grad.at(r, c - start));
                        }
                    }
                    self.accumulate(src, &ds);
                }
                Op::Transpose(a) => {
                    let da = grad.transpose();
                    self.accumulate(a, &da);
                }
                Op::Sum(a) => {
                    let g = grad.item();
                    let shape = self.value(a).shape().to_vec();
                    let da = Tensor::from_vec(&shape, vec![g; shape.iter().product()])?;
                    self.accumulate(a, &da);
                }
                Op::Mean(a) => {
                    let g = grad.item();
                    let shape = self.value(a).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let da = Tensor::from_vec(&shape, vec![g / n as f64; n])?;
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }

    /// Collect the gradient for each parameter, summing across every
    /// occurrence of the parameter in the graph.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; store.len()];
        for node in &self.nodes {
            if let (Some(pid), Some(g)) = (node.param, node.grad.as_ref()) {
                match grads[pid.0].as_mut() {
                    Some(acc) => acc.add_assign(g),
                    None => grads[pid.0] = Some(g.clone()),
                }
            }
        }
        grads
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn softmax_row_in_place(t: &mut Tensor, r: usize) {
    let cols = t.cols();
    let max = t.row_slice(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for c in 0..cols {
        let e = (t.at(r, c) - max).exp();
        t.set(r, c, e);
        denom += e;
    }
    for c in 0..cols {
        let v = t.at(r, c) / denom;
        t.set(r, c, v);
    }
}

pub(crate) fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
