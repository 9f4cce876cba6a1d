//! Shared convolutional backbone with optional regression and diagnosis heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, BatchNorm, BnCache, Conv3x3, Linear, Shape};

pub const DROPOUT_P: f64 = 0.5;

// Stream ids of the per-component initialisation and dropout generators.
const STREAM_BACKBONE: u64 = 0;
const STREAM_REGRESSION: u64 = 1;
const STREAM_DIAGNOSIS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Backbone,
    Regression,
    Diagnosis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input images are `input_side x input_side`, one channel.
    pub input_side: usize,
    /// Output channels of each conv block; each block halves the resolution.
    pub widths: Vec<usize>,
    pub head_hidden: usize,
    pub n_classes: usize,
    pub regression_head: bool,
    pub diagnosis_head: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            widths: vec![8, 16, 32],
            head_hidden: 256,
            n_classes: 2,
            regression_head: true,
            diagnosis_head: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv3x3,
    pub bn: BatchNorm,
}

/// `Linear(hidden) -> BatchNorm1d -> ReLU -> Dropout(0.5) -> Linear(out)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub backbone: Vec<ConvBlock>,
    pub regression: Option<Head>,
    pub diagnosis: Option<Head>,
}

/// Forward-pass behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Running normalisation statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from `dropout_key`.
    Train { dropout_key: u64 },
}

/// Per-head override used when a head is frozen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Run the regression head with eval-mode behaviour even in training.
    pub regression_eval: bool,
}

struct BlockCache {
    input: Vec<f64>,
    in_shape: Shape,
    bn: BnCache,
    bn_out: Vec<f64>,
    act_shape: Shape,
}

pub struct HeadCache {
    input: Vec<f64>,
    bn: BnCache,
    bn_out: Vec<f64>,
    dropout: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

/// Everything the backward pass needs from a forward pass.
pub struct Tape {
    batch: usize,
    blocks: Vec<BlockCache>,
    last_shape: Shape,
    regression: Option<HeadCache>,
    diagnosis: Option<HeadCache>,
}

impl Tape {
    /// Sign pattern of every rectifier input.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let heads = [&self.regression, &self.diagnosis].into_iter().flatten();
        self.blocks
            .iter()
            .map(|b| &b.bn_out)
            .chain(heads.map(|h| &h.bn_out))
            .flat_map(|v| v.iter().map(|&x| x > 0.0))
            .collect()
    }
}

/// Raw head outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    /// One regression value per example.
    pub z_hat: Option<Vec<f64>>,
    /// `[batch][n_classes]` logits.
    pub logits: Option<Vec<f64>>,
}

/// Gradients aligned with [`Network::params`].
pub type Gradients = Vec<Vec<f64>>;

impl Head {
    fn new(in_features: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(in_features, hidden, rng),
            bn: BatchNorm::new(hidden),
            fc2: Linear::new(hidden, out, rng),
        }
    }

    fn forward(&self, x: &[f64], batch: usize, training: bool, dropout: Option<(u64, u64)>) -> (Vec<f64>, HeadCache) {
        let fc1_out = self.fc1.forward(x, batch);
        let (bn_out, bn) = self.bn.forward(&fc1_out, batch, 1, training);
        let act = layers::relu(&bn_out);
        let (dropped, mask) = match dropout {
            Some((key, stream)) => {
                let mask = layers::dropout_mask(act.len(), DROPOUT_P, key, stream);
                (act.iter().zip(&mask).map(|(a, m)| a * m).collect(), Some(mask))
            }
            None => (act, None),
        };
        let out = self.fc2.forward(&dropped, batch);
        (
            out,
            HeadCache {
                input: x.to_vec(),
                bn,
                bn_out,
                dropout: mask,
                dropped,
            },
        )
    }

    /// Returns the gradient wrt the head input and the parameter gradients in
    /// [`Head::params`] order.
    fn backward(&self, cache: &HeadCache, batch: usize, grad_out: &[f64]) -> (Vec<f64>, Gradients) {
        let (d_dropped, d_w2, d_b2) = self.fc2.backward(&cache.dropped, batch, grad_out);
        let d_act = match &cache.dropout {
            Some(mask) => d_dropped.iter().zip(mask).map(|(g, m)| g * m).collect(),
            None => d_dropped,
        };
        let d_bn_out = layers::relu_backward(&cache.bn_out, &d_act);
        let (d_fc1, d_gamma, d_beta) = self.bn.backward(&cache.bn, batch, 1, &d_bn_out);
        let (d_in, d_w1, d_b1) = self.fc1.backward(&cache.input, batch, &d_fc1);
        (d_in, vec![d_w1, d_b1, d_gamma, d_beta, d_w2, d_b2])
    }

    fn params(&self) -> [(&'static str, &Vec<f64>); 6] {
        [
            ("fc1.weight", &self.fc1.weight),
            ("fc1.bias", &self.fc1.bias),
            ("bn.gamma", &self.bn.gamma),
            ("bn.beta", &self.bn.beta),
            ("fc2.weight", &self.fc2.weight),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }
}

/// Identifies one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub group: ParamGroup,
    pub name: String,
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let g = match self.group {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Regression => "regression",
            ParamGroup::Diagnosis => "diagnosis",
        };
        write!(f, "{g}.{}", self.name)
    }
}

impl Network {
    /// Builds a network whose components are initialised from independent
    /// streams of `seed`, so adding or removing a head leaves the others unchanged.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        if config.input_side == 0 || config.widths.is_empty() || config.head_hidden == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if config.input_side >> config.widths.len() == 0 {
            return Err(Error::Config(format!(
                "input side {} too small for {} pooling blocks",
                config.input_side,
                config.widths.len()
            )));
        }
        if !config.regression_head && !config.diagnosis_head {
            return Err(Error::Config("network needs at least one head".into()));
        }
        if config.diagnosis_head && config.n_classes < 2 {
            return Err(Error::Config("diagnosis head needs at least two classes".into()));
        }
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        let mut rng = stream(STREAM_BACKBONE);
        let mut in_c = 1;
        let mut backbone = Vec::new();
        for &w in &config.widths {
            backbone.push(ConvBlock {
                conv: Conv3x3::new(in_c, w, &mut rng),
                bn: BatchNorm::new(w),
            });
            in_c = w;
        }
        let feat = in_c;
        let regression = config
            .regression_head
            .then(|| Head::new(feat, config.head_hidden, 1, &mut stream(STREAM_REGRESSION)));
        let diagnosis = config
            .diagnosis_head
            .then(|| Head::new(feat, config.head_hidden, config.n_classes, &mut stream(STREAM_DIAGNOSIS)));
        Ok(Self {
            config,
            backbone,
            regression,
            diagnosis,
        })
    }

    pub fn feature_width(&self) -> usize {
        *self.config.widths.last().expect("non-empty widths")
    }

    /// Parameter tensors in a fixed order: backbone blocks, then regression, then diagnosis.
    pub fn params(&self) -> Vec<(ParamId, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.backbone.iter().enumerate() {
            for (name, p) in [
                ("conv.weight", &b.conv.weight),
                ("conv.bias", &b.conv.bias),
                ("bn.gamma", &b.bn.gamma),
                ("bn.beta", &b.bn.beta),
            ] {
                out.push((
                    ParamId {
                        group: ParamGroup::Backbone,
                        name: format!("{i}.{name}"),
                    },
                    p,
                ));
            }
        }
        for (group, head) in [
            (ParamGroup::Regression, &self.regression),
            (ParamGroup::Diagnosis, &self.diagnosis),
        ] {
            if let Some(h) = head {
                for (name, p) in h.params() {
                    out.push((
                        ParamId {
                            group,
                            name: name.to_string(),
                        },
                        p,
                    ));
                }
            }
        }
        out
    }

    /// Mutable parameter tensors, same order as [`Network::params`].
    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for b in &mut self.backbone {
            out.push((ParamGroup::Backbone, &mut b.conv.weight));
            out.push((ParamGroup::Backbone, &mut b.conv.bias));
            out.push((ParamGroup::Backbone, &mut b.bn.gamma));
            out.push((ParamGroup::Backbone, &mut b.bn.beta));
        }
        if let Some(h) = &mut self.regression {
            out.extend(h.params_mut().into_iter().map(|p| (ParamGroup::Regression, p)));
        }
        if let Some(h) = &mut self.diagnosis {
            out.extend(h.params_mut().into_iter().map(|p| (ParamGroup::Diagnosis, p)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Runs a batch of flattened `input_side^2` images through the network.
    pub fn forward(&self, images: &[&[f64]], mode: Mode, options: ForwardOptions) -> Result<(Outputs, Tape)> {
        let side = self.config.input_side;
        let batch = images.len();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(bad) = images.iter().find(|im| im.len() != side * side) {
            return Err(Error::GridMismatch {
                expected: side * side,
                got: bad.len(),
            });
        }
        let training = matches!(mode, Mode::Train { .. });
        let mut x: Vec<f64> = images.iter().flat_map(|im| im.iter().copied()).collect();
        let mut shape = Shape {
            batch,
            channels: 1,
            height: side,
            width: side,
        };
        let mut blocks = Vec::with_capacity(self.backbone.len());
        for block in &self.backbone {
            let (conv_out, conv_shape) = block.conv.forward(&x, shape);
            let (bn_out, bn) = block.bn.forward(&conv_out, batch, conv_shape.spatial(), training);
            let act = layers::relu(&bn_out);
            let (pooled, pooled_shape) = layers::avg_pool2(&act, conv_shape);
            blocks.push(BlockCache {
                input: std::mem::replace(&mut x, pooled),
                in_shape: shape,
                bn,
                bn_out,
                act_shape: conv_shape,
            });
            shape = pooled_shape;
        }
        let features = layers::global_avg_pool(&x, shape);

        let dropout = |stream| match mode {
            Mode::Train { dropout_key } => Some((dropout_key, stream)),
            Mode::Eval => None,
        };
        let (z_hat, regression) = match &self.regression {
            Some(h) => {
                let (train, drop) = if options.regression_eval {
                    (false, None)
                } else {
                    (training, dropout(STREAM_REGRESSION))
                };
                let (out, cache) = h.forward(&features, batch, train, drop);
                (Some(out), Some(cache))
            }
            None => (None, None),
        };
        let (logits, diagnosis) = match &self.diagnosis {
            Some(h) => {
                let (out, cache) = h.forward(&features, batch, training, dropout(STREAM_DIAGNOSIS));
                (Some(out), Some(cache))
            }
            None => (None, None),
        };
        Ok((
            Outputs { z_hat, logits },
            Tape {
                batch,
                blocks,
                last_shape: shape,
                regression,
                diagnosis,
            },
        ))
    }

    /// Backpropagates output gradients. A head whose output gradient is `None`
    /// contributes nothing and gets zero parameter gradients.
    pub fn backward(&self, tape: &Tape, d_z_hat: Option<&[f64]>, d_logits: Option<&[f64]>) -> Gradients {
        let batch = tape.batch;
        let feat = self.feature_width();
        let mut d_features: Option<Vec<f64>> = None;
        let mut head_grads: Vec<Gradients> = Vec::new();
        for (head, cache, grad) in [
            (&self.regression, &tape.regression, d_z_hat),
            (&self.diagnosis, &tape.diagnosis, d_logits),
        ] {
            let (Some(head), Some(cache)) = (head, cache) else {
                continue;
            };
            match grad {
                Some(g) => {
                    let (d_in, grads) = head.backward(cache, batch, g);
                    d_features = Some(match d_features {
                        None => d_in,
                        Some(acc) => acc.iter().zip(&d_in).map(|(a, b)| a + b).collect(),
                    });
                    head_grads.push(grads);
                }
                None => head_grads.push(head.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect()),
            }
        }

        let mut backbone_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.backbone.len());
        match d_features {
            None => {
                for b in &self.backbone {
                    backbone_grads.push(vec![
                        vec![0.0; b.conv.weight.len()],
                        vec![0.0; b.conv.bias.len()],
                        vec![0.0; b.bn.gamma.len()],
                        vec![0.0; b.bn.beta.len()],
                    ]);
                }
            }
            Some(d_feat) => {
                debug_assert_eq!(d_feat.len(), batch * feat);
                let mut grad = layers::global_avg_pool_backward(tape.last_shape, &d_feat);
                for (block, cache) in self.backbone.iter().zip(&tape.blocks).rev() {
                    let d_act = layers::avg_pool2_backward(cache.act_shape, &grad);
                    let d_bn_out = layers::relu_backward(&cache.bn_out, &d_act);
                    let (d_conv, d_gamma, d_beta) =
                        block.bn.backward(&cache.bn, batch, cache.act_shape.spatial(), &d_bn_out);
                    let (d_in, d_w, d_b) = block.conv.backward(&cache.input, cache.in_shape, &d_conv);
                    backbone_grads.push(vec![d_w, d_b, d_gamma, d_beta]);
                    grad = d_in;
                }
                backbone_grads.reverse();
            }
        }
        backbone_grads
            .into_iter()
            .flatten()
            .chain(head_grads.into_iter().flatten())
            .collect()
    }

    /// Folds batch statistics from a training-mode tape into the running estimates.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        for (block, cache) in self.backbone.iter_mut().zip(&tape.blocks) {
            block.bn.update_running(&cache.bn);
        }
        if let (Some(h), Some(c)) = (&mut self.regression, &tape.regression) {
            h.bn.update_running(&c.bn);
        }
        if let (Some(h), Some(c)) = (&mut self.diagnosis, &tape.diagnosis) {
            h.bn.update_running(&c.bn);
        }
    }
}

/// Row-wise softmax of `[batch][classes]` logits.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            input_side: 8,
            widths: vec![2, 4],
            head_hidden: 6,
            ..NetworkConfig::default()
        }
    }

    fn images(n: usize, side: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| (0..side * side).map(|i| ((i * 7 + k * 13) % 11) as f64 / 11.0).collect())
            .collect()
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Network::new(small(), 3).unwrap();
        let ids: Vec<String> = net.params().iter().map(|(id, _)| id.to_string()).collect();
        for (id, (_, p)) in ids.iter().zip(net.params_mut()) {
            if id.ends_with("weight") {
                p.fill(0.0);
            }
        }
        let imgs = images(3, 8);
        let refs: Vec<&[f64]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (out, _) = net.forward(&refs, Mode::Eval, ForwardOptions::default()).unwrap();
        let bias = net.regression.as_ref().unwrap().fc2.bias[0];
        assert!(out.z_hat.unwrap().iter().all(|&z| z == bias));
    }

    #[test]
    fn eval_is_deterministic_and_order_preserving() {
        let net = Network::new(small(), 5).unwrap();
        let imgs = images(4, 8);
        let refs: Vec<&[f64]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (a, _) = net.forward(&refs, Mode::Eval, ForwardOptions::default()).unwrap();
        let (b, _) = net.forward(&refs, Mode::Eval, ForwardOptions::default()).unwrap();
        assert_eq!(a, b);
        let z = a.z_hat.unwrap();
        assert_eq!(z.len(), 4);
        assert_eq!(a.logits.unwrap().len(), 8);
        for (i, r) in refs.iter().enumerate() {
            let (single, _) = net.forward(&[r], Mode::Eval, ForwardOptions::default()).unwrap();
            assert_eq!(single.z_hat.unwrap()[0], z[i]);
        }
    }

    #[test]
    fn rejects_wrong_grid() {
        let net = Network::new(small(), 0).unwrap();
        let img = vec![0.0; 10];
        assert!(matches!(
            net.forward(&[&img], Mode::Eval, ForwardOptions::default()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn heads_do_not_perturb_each_other_at_init() {
        let both = Network::new(small(), 9).unwrap();
        let diag_only = Network::new(
            NetworkConfig {
                regression_head: false,
                ..small()
            },
            9,
        )
        .unwrap();
        assert_eq!(both.backbone, diag_only.backbone);
        assert_eq!(both.diagnosis, diag_only.diagnosis);
    }

    #[test]
    fn dropout_only_in_training() {
        let net = Network::new(small(), 1).unwrap();
        let imgs = images(4, 8);
        let refs: Vec<&[f64]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (_, tape) = net.forward(&refs, Mode::Eval, ForwardOptions::default()).unwrap();
        assert!(tape.diagnosis.as_ref().unwrap().dropout.is_none());
        let (_, tape) = net
            .forward(&refs, Mode::Train { dropout_key: 4 }, ForwardOptions::default())
            .unwrap();
        assert!(tape.diagnosis.as_ref().unwrap().dropout.is_some());
        let (_, tape) = net
            .forward(
                &refs,
                Mode::Train { dropout_key: 4 },
                ForwardOptions { regression_eval: true },
            )
            .unwrap();
        assert!(tape.regression.as_ref().unwrap().dropout.is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1.0, 2.0, 1000.0, -1000.0], 2);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert_eq!(p[2], 1.0);
    }
}
