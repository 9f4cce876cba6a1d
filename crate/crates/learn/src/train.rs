//! SGD training loops for the regression-only, diagnosis-only and multi-task models.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, FoldData};
use crate::error::{Error, Result};
use crate::loss::{self, LossParams};
use crate::metrics::{self, EvalReport};
use crate::network::{ForwardOptions, Gradients, Mode, Network, NetworkConfig, ParamGroup};

const SHUFFLE_STREAM: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Agreement regression only.
    M1,
    /// Diagnosis only.
    M2,
    /// Both heads on one backbone.
    MT,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "mt" => Ok(Self::MT),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

impl ModelKind {
    pub fn network_config(self, base: NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            regression_head: self != Self::M2,
            diagnosis_head: self != Self::M1,
            ..base
        }
    }

    /// Loss weight on the diagnosis term.
    pub fn alpha(self, configured: f64) -> f64 {
        match self {
            Self::M1 => 0.0,
            Self::M2 => 1.0,
            Self::MT => configured,
        }
    }

    pub fn default_selection(self) -> ModelSelection {
        match self {
            Self::M1 => ModelSelection::MinValMae,
            Self::M2 | Self::MT => ModelSelection::MaxValBalancedAccuracy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSelection {
    MinValMae,
    MaxValBalancedAccuracy,
}

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecay {
    /// `theta -= lr * (v + wd * theta)`, outside the momentum buffer.
    Decoupled,
    /// `g += wd * theta` before the momentum buffer.
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecay,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// `None` picks the rule for the model kind.
    pub model_selection: Option<ModelSelection>,
    pub frozen_regression_head: bool,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            weight_decay_mode: WeightDecay::Decoupled,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            seed: 0,
            model_selection: None,
            frozen_regression_head: false,
            gamma: loss::DEFAULT_GAMMA,
            beta: loss::DEFAULT_BETA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return bad("epochs, batch size and decay period must be positive");
        }
        let rates = [self.learning_rate, self.momentum, self.weight_decay, self.lr_decay_factor];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("rates must be finite and non-negative");
        }
        if self.gamma < 0.0 || self.beta <= 0.0 {
            return bad("focal gamma must be >= 0 and smooth-L1 beta > 0");
        }
        Ok(())
    }

    /// Step learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// SGD with momentum over a network's parameter list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub mode: WeightDecay,
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64, mode: WeightDecay) -> Self {
        Self {
            momentum,
            weight_decay,
            mode,
            velocity: net.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies one update. Parameters in `frozen` groups are left untouched.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64, frozen: &[ParamGroup]) {
        for (((group, theta), g), v) in net.params_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            if frozen.contains(&group) {
                continue;
            }
            for i in 0..theta.len() {
                let mut gi = g[i];
                if self.mode == WeightDecay::Coupled {
                    gi += self.weight_decay * theta[i];
                }
                v[i] = self.momentum * v[i] + gi;
                let mut delta = v[i];
                if self.mode == WeightDecay::Decoupled {
                    delta += self.weight_decay * theta[i];
                }
                theta[i] -= lr * delta;
            }
        }
    }
}

/// Per-step dropout key: a splitmix64 hash of the seed and global step.
pub fn step_key(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub val_balanced_accuracy: Option<f64>,
    pub lr: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_mae,val_balanced_accuracy,lr";

pub fn write_epoch_log<W: Write>(mut out: W, log: &[EpochLog]) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map(iaa_core::io::fmt6).unwrap_or_default();
    writeln!(out, "{EPOCH_LOG_HEADER}")?;
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            iaa_core::io::fmt6(e.train_loss),
            opt(e.val_mae),
            opt(e.val_balanced_accuracy),
            iaa_core::io::fmt6(e.lr)
        )?;
    }
    Ok(())
}

/// Training state that advances one epoch at a time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub net: Network,
    pub sgd: Sgd,
    pub shuffle_rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
    /// Batches whose true-class probability was clamped.
    pub clamped: usize,
}

impl Trainer {
    pub fn new(kind: ModelKind, net_config: NetworkConfig, config: TrainConfig) -> Result<Self> {
        let net = Network::new(kind.network_config(net_config), config.seed)?;
        Self::from_network(kind, net, config)
    }

    /// Continues from an existing network, e.g. for fine-tuning.
    pub fn from_network(kind: ModelKind, net: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if (kind != ModelKind::M2) != net.regression.is_some() || (kind != ModelKind::M1) != net.diagnosis.is_some() {
            return Err(Error::Config(format!("network heads do not match model kind {kind:?}")));
        }
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        Ok(Self {
            kind,
            sgd: Sgd::new(&net, config.momentum, config.weight_decay, config.weight_decay_mode),
            net,
            config,
            shuffle_rng,
            step: 0,
            epoch: 0,
            clamped: 0,
        })
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            alpha: self.kind.alpha(self.config.alpha),
            gamma: self.config.gamma,
            beta: self.config.beta,
        }
    }

    fn frozen(&self) -> Vec<ParamGroup> {
        if self.config.frozen_regression_head {
            vec![ParamGroup::Regression]
        } else {
            Vec::new()
        }
    }

    /// Checks that every example has the targets the objective needs.
    pub fn check_targets(&self, examples: &[Example]) -> Result<()> {
        if examples.is_empty() {
            return Err(Error::EmptyFold("train"));
        }
        let n = self.net.config.n_classes;
        if let Some(e) = examples.iter().find(|e| e.label >= n && self.net.diagnosis.is_some()) {
            return Err(Error::MissingTargets {
                what: "diagnosis",
                id: e.id.clone(),
            });
        }
        match self.kind {
            ModelKind::M1 => {
                if let Some(e) = examples.iter().find(|e| e.iaa.is_none()) {
                    return Err(Error::MissingTargets {
                        what: "agreement",
                        id: e.id.clone(),
                    });
                }
            }
            ModelKind::MT if !self.config.frozen_regression_head && self.loss_params().alpha < 1.0 => {
                if examples.iter().all(|e| e.iaa.is_none()) {
                    return Err(Error::MissingTargets {
                        what: "agreement",
                        id: examples[0].id.clone(),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// One forward/backward/update on the given examples; returns the batch loss.
    pub fn train_batch(&mut self, batch: &[&Example]) -> Result<f64> {
        let imgs: Vec<&[f64]> = batch.iter().map(|e| e.image.as_slice()).collect();
        let options = ForwardOptions {
            regression_eval: self.config.frozen_regression_head,
        };
        let mode = Mode::Train {
            dropout_key: step_key(self.config.seed, self.step),
        };
        let (out, tape) = self.net.forward(&imgs, mode, options)?;
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let targets: Vec<Option<f64>> = batch.iter().map(|e| e.iaa).collect();
        let b = loss::batch_loss(
            out.z_hat.as_deref(),
            out.logits.as_deref(),
            &labels,
            &targets,
            self.net.config.n_classes,
            self.loss_params(),
        );
        if !b.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: b.loss,
                epoch: self.epoch,
                step: self.step as usize,
            });
        }
        self.clamped += usize::from(b.clamped > 0);
        let grads = self.net.backward(&tape, b.d_z_hat.as_deref(), b.d_logits.as_deref());
        self.net.update_running_stats(&tape);
        let lr = self.config.lr_at(self.epoch);
        let frozen = self.frozen();
        self.sgd.step(&mut self.net, &grads, lr, &frozen);
        self.step += 1;
        Ok(b.loss)
    }

    /// Shuffles and runs one epoch; returns the example-weighted mean loss.
    pub fn run_epoch(&mut self, train: &[Example]) -> Result<f64> {
        self.check_targets(train)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.train_batch(&batch)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Network,
    /// One-based epoch of the selected network.
    pub best_epoch: usize,
    pub best_report: EvalReport,
    pub trainer: Trainer,
    pub log: Vec<EpochLog>,
}

fn better(selection: ModelSelection, candidate: &EvalReport, current: &EvalReport) -> bool {
    match selection {
        ModelSelection::MinValMae => match (candidate.mae(), current.mae()) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        },
        ModelSelection::MaxValBalancedAccuracy => match (candidate.balanced_accuracy, current.balanced_accuracy) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            _ => false,
        },
    }
}

/// Trains for `config.epochs` epochs, keeping the best network on the validation fold.
pub fn train(kind: ModelKind, data: &FoldData, net_config: NetworkConfig, config: TrainConfig) -> Result<TrainOutcome> {
    let trainer = Trainer::new(kind, net_config, config)?;
    train_with(trainer, data)
}

pub fn train_with(mut trainer: Trainer, data: &FoldData) -> Result<TrainOutcome> {
    if data.valid.is_empty() {
        return Err(Error::EmptyFold("valid"));
    }
    trainer.check_targets(&data.train)?;
    let selection = trainer
        .config
        .model_selection
        .unwrap_or_else(|| trainer.kind.default_selection());
    let mut log = Vec::with_capacity(trainer.config.epochs);
    let mut best: Option<(Network, usize, EvalReport)> = None;
    for _ in 0..trainer.config.epochs {
        let lr = trainer.config.lr_at(trainer.epoch);
        let train_loss = trainer.run_epoch(&data.train)?;
        let report = metrics::evaluate(&trainer.net, &data.valid)?;
        log.push(EpochLog {
            epoch: trainer.epoch,
            train_loss,
            val_mae: report.mae(),
            val_balanced_accuracy: report.balanced_accuracy,
            lr,
        });
        if best.as_ref().is_none_or(|(_, _, b)| better(selection, &report, b)) {
            best = Some((trainer.net.clone(), trainer.epoch, report));
        }
    }
    let (best, best_epoch, best_report) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_report,
        trainer,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            input_side: 8,
            widths: vec![2, 4],
            head_hidden: 6,
            ..NetworkConfig::default()
        }
    }

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|k| Example {
                id: format!("e{k}"),
                image: (0..64).map(|i| ((i * 5 + k * 3) % 7) as f64 / 7.0).collect(),
                label: k % 2,
                iaa: Some(0.5 + 0.04 * (k % 5) as f64),
            })
            .collect()
    }

    #[test]
    fn lr_schedule_steps() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-2);
        assert_eq!(c.lr_at(9), 1e-2);
        assert!((c.lr_at(10) - 1e-3).abs() < 1e-18);
        assert!((c.lr_at(25) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(ModelKind::MT, tiny(), config).unwrap();
        let before: Vec<Vec<f64>> = t.net.params().iter().map(|(_, p)| (*p).clone()).collect();
        t.run_epoch(&examples(8)).unwrap();
        let after: Vec<Vec<f64>> = t.net.params().iter().map(|(_, p)| (*p).clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn frozen_regression_head_is_bit_identical() {
        let config = TrainConfig {
            frozen_regression_head: true,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(ModelKind::MT, tiny(), config).unwrap();
        let before = t.net.regression.clone();
        let backbone = t.net.backbone.clone();
        for _ in 0..3 {
            t.run_epoch(&examples(10)).unwrap();
        }
        assert_eq!(t.net.regression, before);
        assert_ne!(t.net.backbone, backbone);
    }

    #[test]
    fn single_unit_sgd_step_matches_hand_gradient() {
        // y = w*x + b, loss = 0.5*(y - t)^2, x = 1, t = 0, w = 1, b = 0:
        // dL/dw = (w*x + b - t)*x = 1, dL/db = 1.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut unit = Linear::new(1, 1, &mut rng);
        unit.weight = vec![1.0];
        unit.bias = vec![0.0];
        let y = unit.forward(&[1.0], 1);
        let (_, dw, db) = unit.backward(&[1.0], 1, &[y[0] - 0.0]);
        assert_eq!((dw[0], db[0]), (1.0, 1.0));
        let lr = 0.1;
        let w = unit.weight[0] - lr * dw[0];
        assert!((w - 0.9).abs() < 1e-15);
    }

    #[test]
    fn decay_modes_differ_only_with_momentum_history() {
        let net = Network::new(tiny(), 0).unwrap();
        let grads: Gradients = net.params().iter().map(|(_, p)| vec![0.5; p.len()]).collect();
        let mut a = net.clone();
        let mut b = net.clone();
        let mut sa = Sgd::new(&a, 0.9, 1e-2, WeightDecay::Coupled);
        let mut sb = Sgd::new(&b, 0.9, 1e-2, WeightDecay::Decoupled);
        sa.step(&mut a, &grads, 0.1, &[]);
        sb.step(&mut b, &grads, 0.1, &[]);
        // A first step from zero velocity is the same either way.
        for ((_, x), (_, y)) in a.params().iter().zip(b.params()) {
            for (p, q) in x.iter().zip(y.iter()) {
                assert!((p - q).abs() < 1e-15);
            }
        }
        sa.step(&mut a, &grads, 0.1, &[]);
        sb.step(&mut b, &grads, 0.1, &[]);
        assert_ne!(a.backbone, b.backbone);
    }

    #[test]
    fn m1_requires_targets() {
        let mut data = examples(6);
        data[2].iaa = None;
        let mut t = Trainer::new(ModelKind::M1, tiny(), TrainConfig::default()).unwrap();
        assert!(matches!(t.run_epoch(&data), Err(Error::MissingTargets { .. })));
        assert!(matches!(t.run_epoch(&[]), Err(Error::EmptyFold(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let config = TrainConfig {
            batch_size: 3,
            epochs: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let data = FoldData {
            train: examples(10),
            valid: examples(4),
            test: Vec::new(),
        };
        let a = train(ModelKind::MT, &data, tiny(), config.clone()).unwrap();
        let b = train(ModelKind::MT, &data, tiny(), config).unwrap();
        assert_eq!(a.trainer.net, b.trainer.net);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn alpha_endpoints_match_single_task_trajectories() {
        let data = examples(12);
        let base = TrainConfig {
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut mt = Trainer::new(ModelKind::MT, tiny(), TrainConfig { alpha: 1.0, ..base.clone() }).unwrap();
        let mut m2 = Trainer::new(ModelKind::M2, tiny(), base.clone()).unwrap();
        for _ in 0..3 {
            assert_eq!(mt.run_epoch(&data).unwrap(), m2.run_epoch(&data).unwrap());
            assert_eq!(mt.net.backbone, m2.net.backbone);
            assert_eq!(mt.net.diagnosis, m2.net.diagnosis);
        }
        let mut mt = Trainer::new(ModelKind::MT, tiny(), TrainConfig { alpha: 0.0, ..base.clone() }).unwrap();
        let mut m1 = Trainer::new(ModelKind::M1, tiny(), base).unwrap();
        for _ in 0..3 {
            assert_eq!(mt.run_epoch(&data).unwrap(), m1.run_epoch(&data).unwrap());
            assert_eq!(mt.net.backbone, m1.net.backbone);
            assert_eq!(mt.net.regression, m1.net.regression);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { alpha: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!("Mt".parse::<ModelKind>().unwrap(), ModelKind::MT);
    }

    #[test]
    fn epoch_log_csv() {
        let mut buf = Vec::new();
        write_epoch_log(
            &mut buf,
            &[EpochLog {
                epoch: 1,
                train_loss: 0.5,
                val_mae: None,
                val_balanced_accuracy: Some(0.75),
                lr: 0.01,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_mae,val_balanced_accuracy,lr\n1,0.500000,,0.750000,0.010000\n"
        );
    }
}
