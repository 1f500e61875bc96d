//! Two-headed accuracy predictor.
//!
//! ```text
//!  arch slots ──► encoder (affine + ReLU, width 24) ──► proxy head ──► (flops, params)
//!                        │
//!                        └──┬── concat ◄── recipe slots
//!                           ▼
//!                  hidden (affine + ReLU, width 24) ──► accuracy head ──► score
//! ```
//!
//! The encoder is pretrained on normalized FLOPs/parameter counts, which cost
//! nothing to label, and then transferred into the accuracy predictor. All
//! gradients are computed by hand; [`gradient_check`] compares them against
//! central finite differences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean_squared_error, spearman};

pub const EMBEDDING_WIDTH: usize = 24;
const CHECKPOINT_FORMAT: &str = "nars-predictor";
const CHECKPOINT_VERSION: u32 = 1;

/// Huber loss and its derivative with respect to `pred`.
pub fn huber(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Affine layer, weights stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero bias.
    fn he_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Dense::zeros(inputs, outputs);
        if inputs > 0 {
            let limit = (6.0 / inputs as f64).sqrt();
            for w in &mut d.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        d
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.bias[o]);
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x`, and writes the input gradient into `dx` when given.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut Vec<f64>>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(self.inputs, 0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// The four affine layers. Also used for gradients and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layers {
    pub encoder: Dense,
    pub hidden: Dense,
    pub proxy_head: Dense,
    pub accuracy_head: Dense,
}

impl Layers {
    fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.inputs, d.outputs);
        Layers {
            encoder: z(&self.encoder),
            hidden: z(&self.hidden),
            proxy_head: z(&self.proxy_head),
            accuracy_head: z(&self.accuracy_head),
        }
    }

    fn all(&self) -> [&Dense; 4] {
        [
            &self.encoder,
            &self.hidden,
            &self.proxy_head,
            &self.accuracy_head,
        ]
    }

    fn all_mut(&mut self) -> [&mut Dense; 4] {
        [
            &mut self.encoder,
            &mut self.hidden,
            &mut self.proxy_head,
            &mut self.accuracy_head,
        ]
    }
}

/// Min-max constants for the proxy targets, taken from the pretraining pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostNormalization {
    pub flops_min: f64,
    pub flops_max: f64,
    pub params_min: f64,
    pub params_max: f64,
}

impl CostNormalization {
    pub fn fit(costs: &[(u64, u64)]) -> Self {
        let f = costs.iter().map(|c| c.0 as f64);
        let p = costs.iter().map(|c| c.1 as f64);
        CostNormalization {
            flops_min: f.clone().fold(f64::INFINITY, f64::min),
            flops_max: f.fold(f64::NEG_INFINITY, f64::max),
            params_min: p.clone().fold(f64::INFINITY, f64::min),
            params_max: p.fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn normalize(&self, flops: u64, params: u64) -> (f64, f64) {
        let n = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        (
            n(flops as f64, self.flops_min, self.flops_max),
            n(params as f64, self.params_min, self.params_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorNet {
    pub layers: Layers,
    pub normalization: Option<CostNormalization>,
    pub layout_fingerprint: Option<String>,
    /// Whether the encoder came from proxy pretraining.
    pub pretrained: bool,
}

/// Intermediate activations of one accuracy forward pass.
struct Trace {
    z1: Vec<f64>,
    joint: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    y: f64,
}

impl PredictorNet {
    pub fn init(arch_dim: usize, recipe_dim: usize, seed: u64) -> Result<Self> {
        Self::with_width(arch_dim, recipe_dim, EMBEDDING_WIDTH, seed)
    }

    pub fn with_width(arch_dim: usize, recipe_dim: usize, width: usize, seed: u64) -> Result<Self> {
        Self::check_dims(arch_dim, recipe_dim, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Layers {
            encoder: Dense::he_uniform(arch_dim, width, &mut rng),
            hidden: Dense::he_uniform(width + recipe_dim, width, &mut rng),
            proxy_head: Dense::he_uniform(width, 2, &mut rng),
            accuracy_head: Dense::zeros(width, 1),
        };
        Ok(PredictorNet {
            layers,
            normalization: None,
            layout_fingerprint: None,
            pretrained: false,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(arch_dim: usize, recipe_dim: usize, width: usize) -> Result<Self> {
        Self::check_dims(arch_dim, recipe_dim, width)?;
        Ok(PredictorNet {
            layers: Layers {
                encoder: Dense::zeros(arch_dim, width),
                hidden: Dense::zeros(width + recipe_dim, width),
                proxy_head: Dense::zeros(width, 2),
                accuracy_head: Dense::zeros(width, 1),
            },
            normalization: None,
            layout_fingerprint: None,
            pretrained: false,
        })
    }

    fn check_dims(arch_dim: usize, recipe_dim: usize, width: usize) -> Result<()> {
        if arch_dim + recipe_dim == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "predictor needs a non-empty input and a positive width".into(),
            ));
        }
        Ok(())
    }

    pub fn arch_dim(&self) -> usize {
        self.layers.encoder.inputs
    }

    pub fn recipe_dim(&self) -> usize {
        self.layers.hidden.inputs - self.width()
    }

    pub fn width(&self) -> usize {
        self.layers.encoder.outputs
    }

    fn check_len(&self, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::Shape { expected, actual });
        }
        Ok(())
    }

    fn embed(&self, arch: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut z1 = Vec::with_capacity(self.width());
        self.layers.encoder.forward(arch, &mut z1);
        let h1 = z1.iter().map(|&z| relu(z)).collect();
        (z1, h1)
    }

    /// Normalized `(flops, params)` predicted from the architecture slots.
    pub fn forward_proxy(&self, arch: &[f64]) -> Result<(f64, f64)> {
        self.check_len(self.arch_dim(), arch.len())?;
        let (_, h1) = self.embed(arch);
        let mut out = Vec::with_capacity(2);
        self.layers.proxy_head.forward(&h1, &mut out);
        Ok((out[0], out[1]))
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let (z1, h1) = self.embed(&x[..self.arch_dim()]);
        let mut joint = h1;
        joint.extend_from_slice(&x[self.arch_dim()..]);
        let mut z2 = Vec::with_capacity(self.width());
        self.layers.hidden.forward(&joint, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
        let mut y = Vec::with_capacity(1);
        self.layers.accuracy_head.forward(&h2, &mut y);
        Trace {
            z1,
            joint,
            z2,
            h2,
            y: y[0],
        }
    }

    /// Predicted accuracy score for a full encoded vector.
    pub fn forward_accuracy(&self, x: &[f64]) -> Result<f64> {
        self.check_len(self.arch_dim() + self.recipe_dim(), x.len())?;
        Ok(self.trace(x).y)
    }

    /// Accumulates d(loss)/d(params) for the accuracy path; returns the loss.
    fn backprop_accuracy(&self, x: &[f64], target: f64, grad: &mut Layers) -> f64 {
        let t = self.trace(x);
        let (loss, dy) = huber(t.y, target);
        let l = &self.layers;
        let mut dh2 = Vec::new();
        l.accuracy_head
            .backward(&t.h2, &[dy], &mut grad.accuracy_head, Some(&mut dh2));
        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&t.z2)
            .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
            .collect();
        let mut djoint = Vec::new();
        l.hidden
            .backward(&t.joint, &dz2, &mut grad.hidden, Some(&mut djoint));
        let dz1: Vec<f64> = djoint[..self.width()]
            .iter()
            .zip(&t.z1)
            .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
            .collect();
        l.encoder
            .backward(&x[..self.arch_dim()], &dz1, &mut grad.encoder, None);
        loss
    }

    /// Proxy path: Huber summed over both targets.
    fn backprop_proxy(&self, arch: &[f64], target: (f64, f64), grad: &mut Layers) -> f64 {
        let (z1, h1) = self.embed(arch);
        let mut out = Vec::with_capacity(2);
        self.layers.proxy_head.forward(&h1, &mut out);
        let (l0, d0) = huber(out[0], target.0);
        let (l1, d1) = huber(out[1], target.1);
        let mut dh1 = Vec::new();
        self.layers
            .proxy_head
            .backward(&h1, &[d0, d1], &mut grad.proxy_head, Some(&mut dh1));
        let dz1: Vec<f64> = dh1
            .iter()
            .zip(&z1)
            .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
            .collect();
        self.layers
            .encoder
            .backward(arch, &dz1, &mut grad.encoder, None);
        l0 + l1
    }

    /// Analytic gradient of `huber(forward_accuracy(x), target)`.
    pub fn accuracy_gradient(&self, x: &[f64], target: f64) -> Result<Layers> {
        self.check_len(self.arch_dim() + self.recipe_dim(), x.len())?;
        let mut g = self.layers.zeros_like();
        self.backprop_accuracy(x, target, &mut g);
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        crate::io::write_atomic(path, &serde_json::to_vec_pretty(&ck)?)
    }

    /// Loads a checkpoint; `expected_fingerprint` must match the layout it was
    /// trained against when both are known.
    pub fn load(path: impl AsRef<Path>, expected_fingerprint: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported predictor checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let net = ck.net;
        let shapes_ok = net.layers.encoder.outputs == net.width()
            && net.layers.hidden.outputs == net.width()
            && net.layers.proxy_head.inputs == net.width()
            && net.layers.accuracy_head.inputs == net.width()
            && net
                .layers
                .all()
                .iter()
                .all(|d| d.weights.len() == d.inputs * d.outputs && d.bias.len() == d.outputs);
        if !shapes_ok {
            return Err(Error::InvalidArgument(
                "predictor checkpoint has inconsistent shapes".into(),
            ));
        }
        if let (Some(expected), Some(found)) =
            (expected_fingerprint, net.layout_fingerprint.as_deref())
        {
            if expected != found {
                return Err(Error::LayoutMismatch {
                    expected: expected.into(),
                    found: found.into(),
                });
            }
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    net: PredictorNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Gradient descent with momentum.
    Sgd,
    /// Adam with beta1 = `momentum`, beta2 = 0.999.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Trainable {
    encoder: bool,
    hidden: bool,
    proxy_head: bool,
    accuracy_head: bool,
}

impl Trainable {
    fn mask(&self) -> [bool; 4] {
        [
            self.encoder,
            self.hidden,
            self.proxy_head,
            self.accuracy_head,
        ]
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Optimizer {
    kind: OptimizerKind,
    first: Layers,
    second: Layers,
    lr: f64,
    momentum: f64,
    steps: i32,
}

impl Optimizer {
    fn new(net: &PredictorNet, lr: f64, config: &TrainConfig) -> Self {
        Optimizer {
            kind: config.optimizer,
            first: net.layers.zeros_like(),
            second: net.layers.zeros_like(),
            lr,
            momentum: config.momentum,
            steps: 0,
        }
    }

    /// Applies `grad * scale` to the trainable layers.
    fn step(&mut self, net: &mut PredictorNet, grad: &Layers, scale: f64, trainable: Trainable) {
        self.steps += 1;
        let b1 = self.momentum;
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
        let layers = net
            .layers
            .all_mut()
            .into_iter()
            .zip(self.first.all_mut())
            .zip(self.second.all_mut())
            .zip(grad.all())
            .zip(trainable.mask());
        for ((((p, m), v), g), on) in layers {
            if !on {
                continue;
            }
            let slots = p
                .values_mut()
                .zip(m.values_mut())
                .zip(v.values_mut())
                .zip(g.values());
            for (((w, mw), vw), gw) in slots {
                let gw = gw * scale;
                match self.kind {
                    OptimizerKind::Sgd => {
                        *mw = b1 * *mw - self.lr * gw;
                        *w += *mw;
                    }
                    OptimizerKind::Adam => {
                        *mw = b1 * *mw + (1.0 - b1) * gw;
                        *vw = ADAM_BETA2 * *vw + (1.0 - ADAM_BETA2) * gw * gw;
                        *w -= self.lr * (*mw / c1) / ((*vw / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_rank_correlation: Option<f64>,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySample {
    pub arch: Vec<f64>,
    pub flops_norm: f64,
    pub params_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    /// Stop when validation MSE improves by less than `min_improvement`
    /// over `patience` epochs.
    pub patience: usize,
    pub min_improvement: f64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            train_fraction: 0.8,
            epochs: 100,
            patience: 10,
            min_improvement: 1e-6,
            train: TrainConfig::default(),
        }
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn split_indices(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let idx = shuffled(n, rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n);
    let (a, b) = idx.split_at(n_train);
    let val = if b.is_empty() { a.to_vec() } else { b.to_vec() };
    (a.to_vec(), val)
}

fn proxy_mse(net: &PredictorNet, samples: &[ProxySample], idx: &[usize]) -> (f64, Option<f64>) {
    let mut preds = Vec::with_capacity(idx.len());
    let mut err = 0.0;
    for &i in idx {
        let s = &samples[i];
        let (f, p) = net.forward_proxy(&s.arch).expect("shape checked");
        err += (f - s.flops_norm).powi(2) + (p - s.params_norm).powi(2);
        preds.push(f);
    }
    let targets: Vec<f64> = idx.iter().map(|&i| samples[i].flops_norm).collect();
    let rho = spearman(&preds, &targets).ok();
    (err / (2 * idx.len().max(1)) as f64, rho)
}

/// Shifts the proxy-head biases so mean predictions equal mean targets.
fn center_proxy_head(net: &mut PredictorNet, samples: &[ProxySample], idx: &[usize]) {
    let n = idx.len() as f64;
    let (mut df, mut dp) = (0.0, 0.0);
    for &i in idx {
        let s = &samples[i];
        let (f, p) = net.forward_proxy(&s.arch).expect("shape checked");
        df += s.flops_norm - f;
        dp += s.params_norm - p;
    }
    net.layers.proxy_head.bias[0] += df / n;
    net.layers.proxy_head.bias[1] += dp / n;
}

/// Pretrains encoder + proxy head on normalized FLOPs/parameter targets.
/// Splits `samples` by `train_fraction`, keeps the weights of the epoch with
/// the lowest held-out MSE, and reports metrics on the held-out part (rank
/// correlation is for the FLOPs output).
pub fn pretrain_proxy(
    net: &mut PredictorNet,
    samples: &[ProxySample],
    config: &PretrainConfig,
    seed: u64,
) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::Empty("pretraining pool"));
    }
    for s in samples {
        net.check_len(net.arch_dim(), s.arch.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val) = split_indices(samples.len(), config.train_fraction, &mut rng);
    center_proxy_head(net, samples, &train);
    let trainable = Trainable {
        encoder: true,
        hidden: false,
        proxy_head: true,
        accuracy_head: false,
    };
    let mut opt = Optimizer::new(net, config.train.learning_rate, &config.train);
    let mut trace = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let batch = config.train.batch_size.max(1);
    let mut epochs_run = 0;
    let mut best: Option<(f64, Layers)> = None;
    for _ in 0..config.epochs {
        let order: Vec<usize> = {
            let mut o = train.clone();
            o.shuffle(&mut rng);
            o
        };
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = net.layers.zeros_like();
            for &i in chunk {
                let s = &samples[i];
                total += net.backprop_proxy(&s.arch, (s.flops_norm, s.params_norm), &mut grad);
            }
            opt.step(net, &grad, 1.0 / chunk.len() as f64, trainable);
        }
        trace.push(total / order.len() as f64);
        epochs_run += 1;
        let (val_mse, _) = proxy_mse(net, samples, &val);
        if best.as_ref().is_none_or(|(b, _)| val_mse < *b) {
            best = Some((val_mse, net.layers.clone()));
        }
        history.push(val_mse);
        if history.len() > config.patience {
            let then = history[history.len() - 1 - config.patience];
            if then - val_mse < config.min_improvement {
                break;
            }
        }
    }
    if let Some((_, layers)) = best {
        net.layers = layers;
    }
    let (train_mse, _) = proxy_mse(net, samples, &train);
    let (val_mse, val_rho) = proxy_mse(net, samples, &val);
    net.pretrained = true;
    Ok(FitReport {
        train_mse,
        val_mse,
        val_rank_correlation: val_rho,
        epochs_run,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySample {
    pub x: Vec<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Epochs per phase; phase 1 freezes the encoder, phase 2 trains all.
    pub phase_epochs: usize,
    /// Phase-2 learning rate is `train.learning_rate * phase2_lr_factor`.
    pub phase2_lr_factor: f64,
    pub train: TrainConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            phase_epochs: 50,
            phase2_lr_factor: 0.1,
            // Labeled sets are small; more steps per epoch than pretraining.
            train: TrainConfig {
                batch_size: 16,
                ..TrainConfig::default()
            },
        }
    }
}

fn accuracy_metrics(net: &PredictorNet, samples: &[AccuracySample]) -> (f64, Option<f64>) {
    let preds: Vec<f64> = samples.iter().map(|s| net.trace(&s.x).y).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.accuracy).collect();
    (
        mean_squared_error(&preds, &targets),
        spearman(&preds, &targets).ok(),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    net: &mut PredictorNet,
    samples: &[AccuracySample],
    epochs: usize,
    lr: f64,
    config: &TrainConfig,
    trainable: Trainable,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<f64>,
) {
    let mut opt = Optimizer::new(net, lr, config);
    let batch = config.batch_size.max(1);
    for _ in 0..epochs {
        let order = shuffled(samples.len(), rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = net.layers.zeros_like();
            for &i in chunk {
                total += net.backprop_accuracy(&samples[i].x, samples[i].accuracy, &mut grad);
            }
            opt.step(net, &grad, 1.0 / chunk.len() as f64, trainable);
        }
        trace.push(total / samples.len() as f64);
    }
}

/// Shifts the accuracy-head bias so the mean prediction equals the mean label.
fn center_accuracy_head(net: &mut PredictorNet, samples: &[AccuracySample]) {
    let n = samples.len() as f64;
    let offset: f64 = samples
        .iter()
        .map(|s| s.accuracy - net.trace(&s.x).y)
        .sum::<f64>()
        / n;
    net.layers.accuracy_head.bias[0] += offset;
}

/// Trains the accuracy path with Huber loss in two phases: encoder frozen,
/// then everything at a reduced learning rate. Validation metrics use
/// `validation` when given, the training set otherwise.
pub fn finetune_accuracy(
    net: &mut PredictorNet,
    train: &[AccuracySample],
    validation: Option<&[AccuracySample]>,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FitReport> {
    if train.is_empty() {
        return Err(Error::Empty("accuracy dataset"));
    }
    let dim = net.arch_dim() + net.recipe_dim();
    for s in train.iter().chain(validation.unwrap_or(&[])) {
        net.check_len(dim, s.x.len())?;
        if !(0.0..=1.0).contains(&s.accuracy) {
            return Err(Error::InvalidArgument(format!(
                "accuracy label {} outside [0, 1]",
                s.accuracy
            )));
        }
    }
    center_accuracy_head(net, train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let frozen = Trainable {
        encoder: false,
        hidden: true,
        proxy_head: false,
        accuracy_head: true,
    };
    let all = Trainable {
        encoder: true,
        ..frozen
    };
    let lr = config.train.learning_rate;
    run_epochs(
        net,
        train,
        config.phase_epochs,
        lr,
        &config.train,
        frozen,
        &mut rng,
        &mut trace,
    );
    let lr2 = lr * config.phase2_lr_factor;
    run_epochs(
        net,
        train,
        config.phase_epochs,
        lr2,
        &config.train,
        all,
        &mut rng,
        &mut trace,
    );

    let (train_mse, _) = accuracy_metrics(net, train);
    let (val_mse, val_rho) = accuracy_metrics(net, validation.unwrap_or(train));
    Ok(FitReport {
        train_mse,
        val_mse,
        val_rank_correlation: val_rho,
        epochs_run: 2 * config.phase_epochs,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub parameters_checked: usize,
    /// The point sits at the Huber kink, where the loss is not differentiable.
    pub skipped_kink: bool,
}

pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-4;

/// Compares the analytic gradient of `huber(forward_accuracy(x), target)`
/// with central differences for every parameter. Relative error is
/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn gradient_check(net: &PredictorNet, x: &[f64], target: f64) -> Result<GradientCheck> {
    let analytic = net.accuracy_gradient(x, target)?;
    let residual = (net.forward_accuracy(x)? - target).abs();
    if (residual - 1.0).abs() < KINK_MARGIN {
        return Ok(GradientCheck {
            max_rel_error: 0.0,
            parameters_checked: 0,
            skipped_kink: true,
        });
    }
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let h = FINITE_DIFFERENCE_STEP;
    let loss = |n: &PredictorNet| huber(n.trace(x).y, target).0;
    for layer in 0..4 {
        let count = net.layers.all()[layer].values().count();
        for k in 0..count {
            let orig = *probe.layers.all_mut()[layer].values_mut().nth(k).unwrap();
            *probe.layers.all_mut()[layer].values_mut().nth(k).unwrap() = orig + h;
            let up = loss(&probe);
            *probe.layers.all_mut()[layer].values_mut().nth(k).unwrap() = orig - h;
            let down = loss(&probe);
            *probe.layers.all_mut()[layer].values_mut().nth(k).unwrap() = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = *analytic.all()[layer].values().nth(k).unwrap();
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradientCheck {
        max_rel_error: worst,
        parameters_checked: checked,
        skipped_kink: false,
    })
}

#[cfg(test)]
mod tests;
