//! MLP classifiers with optional batch normalization and dropout.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnBatchStats, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

use super::params::{ParamRole, ParamVector, Segment};

/// Momentum for batch-norm running statistics: `running <- 0.9*running + 0.1*batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Layer widths from input dimension to class count, e.g. `[2, 32, 32, 2]`.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub use_batchnorm: bool,
    /// Dropout probability on hidden activations; 0 disables dropout.
    #[serde(default)]
    pub dropout_rate: f64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidParam(
                "model widths need at least input and output".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParam("zero layer width".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParam(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn hidden_layer_count(&self) -> usize {
        self.n_layers() - 1
    }

    /// Segment table implied by the architecture: per layer weight and bias,
    /// plus norm scale/shift on batch-normalized hidden layers.
    pub fn segments(&self) -> Vec<Segment> {
        let mut segs = Vec::new();
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            segs.push(Segment {
                offset,
                len: fan_in * fan_out,
                role: ParamRole::Weight,
                layer_index: l,
            });
            offset += fan_in * fan_out;
            segs.push(Segment {
                offset,
                len: fan_out,
                role: ParamRole::Bias,
                layer_index: l,
            });
            offset += fan_out;
            if self.use_batchnorm && l < self.hidden_layer_count() {
                segs.push(Segment {
                    offset,
                    len: fan_out,
                    role: ParamRole::NormScale,
                    layer_index: l,
                });
                offset += fan_out;
                segs.push(Segment {
                    offset,
                    len: fan_out,
                    role: ParamRole::NormShift,
                    layer_index: l,
                });
                offset += fan_out;
            }
        }
        segs
    }

    pub fn param_count(&self) -> usize {
        self.segments().iter().map(|s| s.len).sum()
    }
}

/// Forward-pass mode. Training mode draws dropout masks from an explicit
/// seed so that the two passes of a SAM step share identical masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Loss flavor: raw cross-entropy for training, or per-example losses clamped
/// to [0,1] for theory-facing risk terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFlavor {
    Raw,
    ClampedUnit,
}

/// Mean loss, its per-example decomposition, and the weight-norm penalty.
/// `mean` excludes the penalty; `total = mean + penalty`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub mean: f64,
    pub per_example: Vec<f64>,
    pub penalty: f64,
    pub total: f64,
}

/// Loss, flat gradient and any batch-norm statistics observed by one pass.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: LossValue,
    pub grad: Vec<f64>,
    pub bn_stats: Vec<BnBatchStats>,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    config: MlpConfig,
    params: ParamVector,
    bn_running: Vec<BnRunning>,
}

struct BuiltForward {
    graph: Graph,
    logits: NodeId,
    segment_nodes: Vec<NodeId>,
    bn_nodes: Vec<NodeId>,
}

impl MlpModel {
    /// Fan-in-scaled uniform initialization with an explicit seed; biases
    /// zero, norm scales one, norm shifts zero.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let segments = config.segments();
        let k: usize = segments.iter().map(|s| s.len).sum();
        let mut values = vec![0.0; k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in &segments {
            match seg.role {
                ParamRole::Weight => {
                    let fan_in = config.widths[seg.layer_index] as f64;
                    let limit = (6.0 / fan_in).sqrt();
                    for v in values.iter_mut().skip(seg.offset).take(seg.len) {
                        *v = rng.random_range(-limit..limit);
                    }
                }
                ParamRole::Bias | ParamRole::NormShift => {}
                ParamRole::NormScale => {
                    for v in values.iter_mut().skip(seg.offset).take(seg.len) {
                        *v = 1.0;
                    }
                }
            }
        }
        let params = ParamVector::new(values, segments)?;
        let bn_running = (0..if config.use_batchnorm {
            config.hidden_layer_count()
        } else {
            0
        })
            .map(|l| BnRunning {
                mean: vec![0.0; config.widths[l + 1]],
                var: vec![1.0; config.widths[l + 1]],
            })
            .collect();
        Ok(MlpModel {
            config,
            params,
            bn_running,
        })
    }

    pub fn from_parts(
        config: MlpConfig,
        params: ParamVector,
        bn_running: Vec<BnRunning>,
    ) -> Result<Self> {
        config.validate()?;
        if params.segments() != config.segments().as_slice() {
            return Err(Error::InvalidParam(
                "parameter segments do not match model architecture".into(),
            ));
        }
        Ok(MlpModel {
            config,
            params,
            bn_running,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes()
    }

    /// Flat view of the parameters with role tags.
    pub fn param_view(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        self.params.set_values(values)
    }

    pub fn bn_running(&self) -> &[BnRunning] {
        &self.bn_running
    }

    /// Fold one training pass's batch statistics into the running statistics.
    /// Called once per optimizer step, with the statistics of the pass at the
    /// unperturbed parameters.
    pub fn update_running_stats(&mut self, stats: &[BnBatchStats]) {
        debug_assert_eq!(stats.len(), self.bn_running.len());
        for (run, batch) in self.bn_running.iter_mut().zip(stats) {
            for (r, b) in run.mean.iter_mut().zip(&batch.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in run.var.iter_mut().zip(&batch.var_unbiased) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }

    fn build_forward(&self, x: &Tensor, mode: Mode) -> Result<BuiltForward> {
        if x.shape().len() != 2 || x.cols() != self.config.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                detail: format!(
                    "input {:?}, model expects (B, {})",
                    x.shape(),
                    self.config.input_dim()
                ),
            });
        }
        let batch = x.rows();
        let mut graph = Graph::new();
        let mut segment_nodes = Vec::with_capacity(self.params.segments().len());
        let mut bn_nodes = Vec::new();

        // register every parameter segment as a leaf, in segment order
        let mut layer_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); self.config.n_layers()];
        for seg in self.params.segments() {
            let data = self.params.slice(seg).to_vec();
            let shape = match seg.role {
                ParamRole::Weight => vec![
                    self.config.widths[seg.layer_index],
                    self.config.widths[seg.layer_index + 1],
                ],
                _ => vec![seg.len],
            };
            let id = graph.input(Tensor::raw(shape, data));
            segment_nodes.push(id);
            layer_nodes[seg.layer_index].push(id);
        }

        let mut dropout_rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Eval => None,
        };

        let mut h = graph.input(x.clone());
        for l in 0..self.config.n_layers() {
            let nodes = &layer_nodes[l];
            let (w, b) = (nodes[0], nodes[1]);
            let z = graph.matmul(h, w)?;
            let mut z = graph.add_bias(z, b)?;
            let last = l == self.config.n_layers() - 1;
            if last {
                h = z;
                break;
            }
            if self.config.use_batchnorm {
                let (gamma, beta) = (nodes[2], nodes[3]);
                z = match mode {
                    Mode::Train { .. } => {
                        let bn = graph.batch_norm_train(z, gamma, beta)?;
                        bn_nodes.push(bn);
                        bn
                    }
                    Mode::Eval => graph.batch_norm_eval(
                        z,
                        gamma,
                        beta,
                        &self.bn_running[l].mean,
                        &self.bn_running[l].var,
                    )?,
                };
            }
            let mut a = graph.relu(z)?;
            if self.config.dropout_rate > 0.0 {
                if let Some(rng) = dropout_rng.as_mut() {
                    let keep = 1.0 - self.config.dropout_rate;
                    let width = self.config.widths[l + 1];
                    let mask: Vec<f64> = (0..batch * width)
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let m = graph.input(Tensor::raw(vec![batch, width], mask));
                    a = graph.mul(a, m)?;
                }
            }
            h = a;
        }

        Ok(BuiltForward {
            graph,
            logits: h,
            segment_nodes,
            bn_nodes,
        })
    }

    /// Logits for a batch, shape `(B, n_classes)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let built = self.build_forward(x, mode)?;
        Ok(built.graph.value(built.logits).clone())
    }

    /// Cross-entropy loss (optionally clamped per example) plus the
    /// `lambda * ||theta||_2` penalty. Per-example losses exclude the penalty.
    pub fn loss(
        &self,
        x: &Tensor,
        y: &[usize],
        lambda: f64,
        flavor: LossFlavor,
        mode: Mode,
    ) -> Result<LossValue> {
        let built = self.build_forward(x, mode)?;
        let (value, _graph, _ids) = self.finish_loss(built, y, lambda, flavor)?;
        Ok(value)
    }

    /// Forward-only loss that also reports the batch-norm statistics the pass
    /// observed (empty in eval mode or without batch norm).
    pub fn loss_with_stats(
        &self,
        x: &Tensor,
        y: &[usize],
        lambda: f64,
        flavor: LossFlavor,
        mode: Mode,
    ) -> Result<(LossValue, Vec<BnBatchStats>)> {
        let built = self.build_forward(x, mode)?;
        let bn_ids = built.bn_nodes.clone();
        let (value, graph, _total) = self.finish_loss(built, y, lambda, flavor)?;
        let stats = bn_ids
            .iter()
            .filter_map(|id| graph.bn_batch_stats(*id))
            .collect();
        Ok((value, stats))
    }

    /// Loss plus the flat gradient of `mean + penalty` with respect to all
    /// parameters. Pass `lambda = 0` for a pure cross-entropy gradient.
    pub fn loss_and_grad(
        &self,
        x: &Tensor,
        y: &[usize],
        lambda: f64,
        flavor: LossFlavor,
        mode: Mode,
    ) -> Result<LossGrad> {
        let built = self.build_forward(x, mode)?;
        let bn_ids = built.bn_nodes.clone();
        let seg_ids = built.segment_nodes.clone();
        let (value, graph, total_id) = self.finish_loss(built, y, lambda, flavor)?;
        let grads = graph.backward(total_id)?;
        let mut flat = vec![0.0; self.params.k()];
        for (seg, id) in self.params.segments().iter().zip(&seg_ids) {
            if let Some(t) = grads.get(*id) {
                flat[seg.offset..seg.offset + seg.len].copy_from_slice(t.data());
            }
        }
        let bn_stats = bn_ids
            .iter()
            .filter_map(|id| graph.bn_batch_stats(*id))
            .collect();
        Ok(LossGrad {
            loss: value,
            grad: flat,
            bn_stats,
        })
    }

    fn finish_loss(
        &self,
        built: BuiltForward,
        y: &[usize],
        lambda: f64,
        flavor: LossFlavor,
    ) -> Result<(LossValue, Graph, NodeId)> {
        let BuiltForward {
            mut graph,
            logits,
            segment_nodes,
            ..
        } = built;
        let mut per_ex = graph.softmax_cross_entropy(logits, y)?;
        if flavor == LossFlavor::ClampedUnit {
            per_ex = graph.clamp_max(per_ex, 1.0)?;
        }
        let mean = graph.reduce_mean(per_ex)?;
        let (total, penalty_value) = if lambda != 0.0 {
            let mut sq_sum: Option<NodeId> = None;
            for id in &segment_nodes {
                let sq = graph.mul(*id, *id)?;
                let s = graph.reduce_sum(sq)?;
                sq_sum = Some(match sq_sum {
                    Some(acc) => graph.add(acc, s)?,
                    None => s,
                });
            }
            let norm = graph.sqrt(sq_sum.expect("at least one segment"))?;
            let pen = graph.scale(norm, lambda)?;
            let total = graph.add(mean, pen)?;
            (total, graph.value(pen).item()?)
        } else {
            (mean, 0.0)
        };
        let value = LossValue {
            mean: graph.value(mean).item()?,
            per_example: graph.value(per_ex).data().to_vec(),
            penalty: penalty_value,
            total: graph.value(total).item()?,
        };
        Ok((value, graph, total))
    }
}
