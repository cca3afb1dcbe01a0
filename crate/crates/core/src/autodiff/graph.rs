//! Define-by-run tape with reverse-mode differentiation.
//!
//! A `Graph` is rebuilt for every forward pass: nodes are appended in
//! execution order, so the tape is topologically sorted by construction and
//! a single reverse sweep implements the chain rule. Every forward op checks
//! its output for non-finite values and fails loudly instead of propagating
//! them.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Cached forward state for batch normalization backward.
#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { m: NodeId, v: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    Sqrt { a: NodeId },
    ClampMax { a: NodeId, c: f64 },
    ReduceMean { a: NodeId },
    ReduceSum { a: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, cache: BnCache },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Per-feature statistics observed by a training-mode batch norm node.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros when the node is off every path to the loss.
    pub fn get_or_zeros(&self, graph: &Graph, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(graph.value(id).shape().to_vec()),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub const BN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].out
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::GraphCycle { node: id.0 });
        }
        Ok(())
    }

    fn push(&mut self, op: Op, out: Tensor, name: &'static str) -> Result<NodeId> {
        if !out.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteValue { op: name });
        }
        self.nodes.push(Node { op, out });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        // Tensor construction already guarantees finiteness.
        self.nodes.push(Node { op: Op::Input, out: t });
        NodeId(self.nodes.len() - 1)
    }

    /// `a (m,k) @ b (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let row = &db[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += aip * row[j];
                }
            }
        }
        self.push(Op::MatMul { a, b }, Tensor::raw(vec![m, n], out), "matmul")
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Add { a, b }, Tensor::raw(shape, out), "add")
    }

    /// `m (B,n) + v (n)` broadcast over rows.
    pub fn add_bias(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.check(m)?;
        self.check(v)?;
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tm.cols() != tv.numel() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                detail: format!("{:?} + {:?}", tm.shape(), tv.shape()),
            });
        }
        let (b, n) = (tm.rows(), tm.cols());
        let mut out = Vec::with_capacity(b * n);
        for i in 0..b {
            for j in 0..n {
                out.push(tm.data()[i * n + j] + tv.data()[j]);
            }
        }
        self.push(Op::AddBias { m, v }, Tensor::raw(vec![b, n], out), "add_bias")
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Mul { a, b }, Tensor::raw(shape, out), "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        if !c.is_finite() {
            return Err(Error::NonFiniteValue { op: "scale" });
        }
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|x| x * c).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Scale { a, c }, Tensor::raw(shape, out), "scale")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Relu { a }, Tensor::raw(shape, out), "relu")
    }

    /// Elementwise square root. Gradient at 0 is defined as 0.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| x.sqrt()).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Sqrt { a }, Tensor::raw(shape, out), "sqrt")
    }

    /// Elementwise `min(x, c)`. Gradient is 0 where the clamp is active.
    pub fn clamp_max(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        if !c.is_finite() {
            return Err(Error::NonFiniteValue { op: "clamp_max" });
        }
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| x.min(c)).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::ClampMax { a, c }, Tensor::raw(shape, out), "clamp_max")
    }

    /// Mean over all elements, yielding a scalar.
    pub fn reduce_mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = self.value(a);
        let mean = ta.data().iter().sum::<f64>() / ta.numel() as f64;
        self.push(Op::ReduceMean { a }, Tensor::raw(vec![], vec![mean]), "reduce_mean")
    }

    /// Sum over all elements, yielding a scalar.
    pub fn reduce_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let ta = self.value(a);
        let sum = ta.data().iter().sum::<f64>();
        self.push(Op::ReduceSum { a }, Tensor::raw(vec![], vec![sum]), "reduce_sum")
    }

    /// Per-example cross-entropy of softmax(logits) against integer labels:
    /// `logits (B,C), labels (B) -> losses (B)`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let tl = self.value(logits);
        if tl.shape().len() != 2 || tl.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("logits {:?}, {} labels", tl.shape(), labels.len()),
            });
        }
        let (b, c) = (tl.rows(), tl.cols());
        for &y in labels {
            if y >= c {
                return Err(Error::LabelOutOfRange { label: y, n_classes: c });
            }
        }
        let mut losses = Vec::with_capacity(b);
        let mut probs = vec![0.0; b * c];
        for i in 0..b {
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] /= denom;
            }
            // log-sum-exp minus the true-class logit, computed stably
            losses.push(max + denom.ln() - row[labels[i]]);
        }
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::raw(vec![b], losses),
            "softmax_cross_entropy",
        )
    }

    /// Training-mode batch normalization over rows: `x (B,n)` normalized by
    /// batch statistics (biased variance), then scaled by `gamma` and shifted
    /// by `beta` (both `(n)`). Requires B >= 2.
    pub fn batch_norm_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.shape().len() != 2 || tg.numel() != tx.cols() || tb.numel() != tx.cols() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm_train",
                detail: format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            });
        }
        let (b, n) = (tx.rows(), tx.cols());
        if b < 2 {
            return Err(Error::InvalidParam(
                "batch_norm_train requires batch size >= 2".into(),
            ));
        }
        let xd = tx.data();
        let mut mean = vec![0.0; n];
        for i in 0..b {
            for j in 0..n {
                mean[j] += xd[i * n + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= b as f64;
        }
        let mut var = vec![0.0; n];
        for i in 0..b {
            for j in 0..n {
                let d = xd[i * n + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= b as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = vec![0.0; b * n];
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            for j in 0..n {
                let h = (xd[i * n + j] - mean[j]) * inv_std[j];
                x_hat[i * n + j] = h;
                out[i * n + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let var_unbiased: Vec<f64> = var.iter().map(|&v| v * b as f64 / (b as f64 - 1.0)).collect();
        let cache = BnCache {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: var_unbiased,
        };
        self.push(
            Op::BatchNormTrain { x, gamma, beta, cache },
            Tensor::raw(vec![b, n], out),
            "batch_norm_train",
        )
    }

    /// Eval-mode batch normalization using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tx.shape().len() != 2
            || tg.numel() != n
            || tb.numel() != n
            || running_mean.len() != n
            || running_var.len() != n
        {
            return Err(Error::ShapeMismatch {
                op: "batch_norm_eval",
                detail: format!("x {:?} with {} running stats", tx.shape(), running_mean.len()),
            });
        }
        let b = tx.rows();
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            for j in 0..n {
                out[i * n + j] =
                    tg.data()[j] * (tx.data()[i * n + j] - running_mean[j]) * inv_std[j] + tb.data()[j];
            }
        }
        self.push(
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                inv_std,
            },
            Tensor::raw(vec![b, n], out),
            "batch_norm_eval",
        )
    }

    /// Batch statistics recorded by a `batch_norm_train` node, used by the
    /// model to update running statistics.
    pub fn bn_batch_stats(&self, id: NodeId) -> Option<BnBatchStats> {
        match &self.nodes[id.0].op {
            Op::BatchNormTrain { cache, .. } => Some(BnBatchStats {
                mean: cache.batch_mean.clone(),
                var_unbiased: cache.batch_var_unbiased.clone(),
            }),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar loss. Each node is visited exactly once;
    /// nodes off every path to the loss get no gradient entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {
                    // restore: inputs keep their accumulated gradient
                    grads[idx] = Some(up);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for j in 0..n {
                            let u = up[i * n + j];
                            if u == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += u * tb.data()[p * n + j];
                                gb[p * n + j] += u * ta.data()[i * k + p];
                            }
                        }
                    }
                    accumulate(&mut grads, a.0, ga);
                    accumulate(&mut grads, b.0, gb);
                    grads[idx] = Some(up);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, a.0, up.clone());
                    accumulate(&mut grads, b.0, up.clone());
                    grads[idx] = Some(up);
                }
                Op::AddBias { m, v } => {
                    let n = self.value(*v).numel();
                    let rows = self.value(*m).rows();
                    let mut gv = vec![0.0; n];
                    for i in 0..rows {
                        for j in 0..n {
                            gv[j] += up[i * n + j];
                        }
                    }
                    accumulate(&mut grads, m.0, up.clone());
                    accumulate(&mut grads, v.0, gv);
                    grads[idx] = Some(up);
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = up.iter().zip(tb.data()).map(|(u, y)| u * y).collect();
                    let gb: Vec<f64> = up.iter().zip(ta.data()).map(|(u, x)| u * x).collect();
                    accumulate(&mut grads, a.0, ga);
                    accumulate(&mut grads, b.0, gb);
                    grads[idx] = Some(up);
                }
                Op::Scale { a, c } => {
                    let ga: Vec<f64> = up.iter().map(|u| u * c).collect();
                    accumulate(&mut grads, a.0, ga);
                    grads[idx] = Some(up);
                }
                Op::Relu { a } => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = up
                        .iter()
                        .zip(ta.data())
                        .map(|(u, &x)| if x > 0.0 { *u } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a.0, ga);
                    grads[idx] = Some(up);
                }
                Op::Sqrt { a } => {
                    let out = self.nodes[idx].out.data();
                    let ga: Vec<f64> = up
                        .iter()
                        .zip(out)
                        .map(|(u, &s)| if s > 0.0 { u * 0.5 / s } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a.0, ga);
                    grads[idx] = Some(up);
                }
                Op::ClampMax { a, c } => {
                    let ta = self.value(*a);
                    let ga: Vec<f64> = up
                        .iter()
                        .zip(ta.data())
                        .map(|(u, &x)| if x < *c { *u } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a.0, ga);
                    grads[idx] = Some(up);
                }
                Op::ReduceMean { a } => {
                    let n = self.value(*a).numel();
                    let g = up[0] / n as f64;
                    accumulate(&mut grads, a.0, vec![g; n]);
                    grads[idx] = Some(up);
                }
                Op::ReduceSum { a } => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, a.0, vec![up[0]; n]);
                    grads[idx] = Some(up);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let tl = self.value(*logits);
                    let (b, c) = (tl.rows(), tl.cols());
                    let mut gl = vec![0.0; b * c];
                    for i in 0..b {
                        let u = up[i];
                        for j in 0..c {
                            gl[i * c + j] = u * (probs[i * c + j] - if labels[i] == j { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut grads, logits.0, gl);
                    grads[idx] = Some(up);
                }
                Op::BatchNormTrain { x, gamma, beta, cache } => {
                    let tx = self.value(*x);
                    let (b, n) = (tx.rows(), tx.cols());
                    let g = self.value(*gamma).data();
                    let bf = b as f64;
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    let mut sum_dh = vec![0.0; n];
                    let mut sum_dh_h = vec![0.0; n];
                    for i in 0..b {
                        for j in 0..n {
                            let u = up[i * n + j];
                            let h = cache.x_hat[i * n + j];
                            dgamma[j] += u * h;
                            dbeta[j] += u;
                            let dh = u * g[j];
                            sum_dh[j] += dh;
                            sum_dh_h[j] += dh * h;
                        }
                    }
                    let mut dx = vec![0.0; b * n];
                    for i in 0..b {
                        for j in 0..n {
                            let dh = up[i * n + j] * g[j];
                            let h = cache.x_hat[i * n + j];
                            dx[i * n + j] =
                                cache.inv_std[j] / bf * (bf * dh - sum_dh[j] - h * sum_dh_h[j]);
                        }
                    }
                    accumulate(&mut grads, x.0, dx);
                    accumulate(&mut grads, gamma.0, dgamma);
                    accumulate(&mut grads, beta.0, dbeta);
                    grads[idx] = Some(up);
                }
                Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                    let tx = self.value(*x);
                    let (b, n) = (tx.rows(), tx.cols());
                    let g = self.value(*gamma).data();
                    let mut dx = vec![0.0; b * n];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for i in 0..b {
                        for j in 0..n {
                            let u = up[i * n + j];
                            dx[i * n + j] = u * g[j] * inv_std[j];
                            dgamma[j] += u * (tx.data()[i * n + j] - mean[j]) * inv_std[j];
                            dbeta[j] += u;
                        }
                    }
                    accumulate(&mut grads, x.0, dx);
                    accumulate(&mut grads, gamma.0, dgamma);
                    accumulate(&mut grads, beta.0, dbeta);
                    grads[idx] = Some(up);
                }
            }
        }

        let by_node = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::raw(self.nodes[i].out.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { by_node })
    }

}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot => *slot = Some(g),
    }
}
