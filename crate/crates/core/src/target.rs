//! Target classifiers: the black-box models under audit.
//!
//! Two small architectures stand in for the federated clients' networks: a
//! multinomial logistic regression and a one-hidden-layer ReLU MLP. Both are
//! trained by mini-batch SGD on cross-entropy with L2 weight decay; DP-SGD
//! clips every per-sample gradient and adds Gaussian noise to the batch sum.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accountant;
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::util::{mix_seed, rng_from_seed, serde_float, softmax, Rng};

/// Probability floor used by [`cross_entropy_loss`].
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Logistic,
    Mlp { hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Logistic
    }
}

impl Architecture {
    pub fn param_count(&self, d: usize, k: usize) -> usize {
        match *self {
            Architecture::Logistic => k * d + k,
            Architecture::Mlp { hidden: h } => h * d + h + k * h + k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub classes: usize,
    /// Flat parameter vector; see [`TargetModel::layers`] for the layout.
    pub params: Vec<f64>,
}

impl TargetModel {
    /// Logistic models start at zero; MLPs use He-normal hidden weights.
    pub fn init(architecture: Architecture, input_dim: usize, classes: usize, seed: u64) -> Self {
        let n = architecture.param_count(input_dim, classes);
        let mut params = vec![0.0; n];
        if let Architecture::Mlp { hidden } = architecture {
            let mut rng = rng_from_seed(seed);
            let s1 = (2.0 / input_dim as f64).sqrt();
            for w in &mut params[..hidden * input_dim] {
                *w = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            let off = hidden * input_dim + hidden;
            let s2 = (1.0 / hidden as f64).sqrt();
            for w in &mut params[off..off + classes * hidden] {
                *w = s2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        TargetModel {
            architecture,
            input_dim,
            classes,
            params,
        }
    }

    /// Named row-major blocks of the parameter vector, in storage order.
    pub fn layers(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, k) = (self.input_dim, self.classes);
        match self.architecture {
            Architecture::Logistic => vec![("weight", vec![k, d]), ("bias", vec![k])],
            Architecture::Mlp { hidden: h } => vec![
                ("hidden.weight", vec![h, d]),
                ("hidden.bias", vec![h]),
                ("output.weight", vec![k, h]),
                ("output.bias", vec![k]),
            ],
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64], h: usize) -> Vec<f64> {
        let d = self.input_dim;
        let (w1, rest) = self.params.split_at(h * d);
        let b1 = &rest[..h];
        (0..h)
            .map(|i| {
                let z = b1[i] + dot(&w1[i * d..(i + 1) * d], x);
                z.max(0.0)
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.input_dim, self.classes);
        match self.architecture {
            Architecture::Logistic => {
                let (w, b) = self.params.split_at(k * d);
                (0..k).map(|c| b[c] + dot(&w[c * d..(c + 1) * d], x)).collect()
            }
            Architecture::Mlp { hidden: h } => {
                let a = self.hidden_activations(x, h);
                let off = h * d + h;
                let w2 = &self.params[off..off + k * h];
                let b2 = &self.params[off + k * h..];
                (0..k).map(|c| b2[c] + dot(&w2[c * h..(c + 1) * h], &a)).collect()
            }
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Writes the gradient of the cross-entropy of one sample into `grad`
    /// (overwriting it) and returns the sample's loss.
    pub fn sample_gradient(&self, x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let (d, k) = (self.input_dim, self.classes);
        debug_assert_eq!(grad.len(), self.params.len());
        match self.architecture {
            Architecture::Logistic => {
                let p = self.predict_one(x);
                let (gw, gb) = grad.split_at_mut(k * d);
                for c in 0..k {
                    let g = p[c] - if c == label { 1.0 } else { 0.0 };
                    gb[c] = g;
                    for (gj, &xj) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *gj = g * xj;
                    }
                }
                cross_entropy_loss(&p, label)
            }
            Architecture::Mlp { hidden: h } => {
                let d1 = self.input_dim;
                let w1 = &self.params[..h * d1];
                let b1 = &self.params[h * d1..h * d1 + h];
                let pre: Vec<f64> = (0..h)
                    .map(|i| b1[i] + dot(&w1[i * d1..(i + 1) * d1], x))
                    .collect();
                let a: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
                let off = h * d1 + h;
                let w2 = &self.params[off..off + k * h];
                let b2 = &self.params[off + k * h..];
                let z: Vec<f64> = (0..k).map(|c| b2[c] + dot(&w2[c * h..(c + 1) * h], &a)).collect();
                let p = softmax(&z);
                let g: Vec<f64> = (0..k)
                    .map(|c| p[c] - if c == label { 1.0 } else { 0.0 })
                    .collect();

                let (g_hidden, g_out) = grad.split_at_mut(off);
                let (gw2, gb2) = g_out.split_at_mut(k * h);
                for c in 0..k {
                    gb2[c] = g[c];
                    for i in 0..h {
                        gw2[c * h + i] = g[c] * a[i];
                    }
                }
                let (gw1, gb1) = g_hidden.split_at_mut(h * d1);
                for i in 0..h {
                    let da: f64 = if pre[i] > 0.0 {
                        (0..k).map(|c| w2[c * h + i] * g[c]).sum()
                    } else {
                        0.0
                    };
                    gb1[i] = da;
                    for (gj, &xj) in gw1[i * d1..(i + 1) * d1].iter_mut().zip(x) {
                        *gj = da * xj;
                    }
                }
                cross_entropy_loss(&p, label)
            }
        }
    }

    /// Mean cross-entropy over a dataset.
    pub fn mean_loss(&self, data: &Dataset) -> f64 {
        let total: f64 = data
            .records
            .iter()
            .map(|r| cross_entropy_loss(&self.predict_one(&r.features), r.task_label))
            .sum();
        total / data.len() as f64
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let correct = data
            .records
            .iter()
            .filter(|r| argmax(&self.logits(&r.features)) == r.task_label)
            .count();
        correct as f64 / data.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(LOSS_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Batch size is `ceil(n_train / batch_divisor)`.
    pub batch_divisor: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::Logistic,
            epochs: 100,
            learning_rate: 0.003,
            weight_decay: 1e-4,
            batch_divisor: 15,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_divisor < 1 {
            return Err(Error::config("batch_divisor", "must be >= 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0,1)"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be finite and >= 0"));
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return Err(Error::config("architecture", "mlp hidden width must be >= 1"));
        }
        Ok(())
    }

    pub fn batch_size(&self, n: usize) -> usize {
        n.div_ceil(self.batch_divisor).max(1)
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size(n))
    }

    /// Number of noisy gradient steps a DP run over `n` records takes.
    pub fn planned_steps(&self, n: usize) -> usize {
        self.epochs * self.batches_per_epoch(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    /// `None` means epsilon = infinity (no privacy).
    pub epsilon: Option<f64>,
    pub delta: f64,
    #[serde(with = "serde_float")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub steps: usize,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig::no_dp()
    }
}

impl PrivacyConfig {
    pub const DEFAULT_DELTA: f64 = 1e-5;
    pub const DEFAULT_CLIP: f64 = 2.0;

    pub fn no_dp() -> Self {
        PrivacyConfig {
            epsilon: None,
            delta: Self::DEFAULT_DELTA,
            clip_norm: Self::DEFAULT_CLIP,
            noise_multiplier: 0.0,
            steps: 0,
        }
    }

    /// Resolves the noise multiplier for a target epsilon over `steps`
    /// Gaussian-mechanism steps.
    pub fn for_epsilon(epsilon: f64, steps: usize, delta: f64, clip_norm: f64) -> Result<Self> {
        let sigma = accountant::calibrate_sigma(epsilon, steps, delta)?;
        Ok(PrivacyConfig {
            epsilon: Some(epsilon),
            delta,
            clip_norm,
            noise_multiplier: sigma,
            steps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0,1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be > 0"));
        }
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier >= 0.0) {
            return Err(Error::config("noise_multiplier", "must be finite and >= 0"));
        }
        if self.noise_multiplier > 0.0 && self.clip_norm.is_infinite() {
            return Err(Error::config(
                "clip_norm",
                "must be finite when noise is added",
            ));
        }
        match self.epsilon {
            None if self.noise_multiplier != 0.0 => Err(Error::config(
                "epsilon",
                "infinite epsilon requires noise_multiplier = 0",
            )),
            Some(e) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::config("epsilon", "must be finite and > 0"))
            }
            Some(_) if self.noise_multiplier == 0.0 => Err(Error::config(
                "noise_multiplier",
                "finite epsilon requires noise_multiplier > 0",
            )),
            _ => Ok(()),
        }
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_some()
    }
}

/// Rescales `g` in place to norm at most `clip` and returns the factor used,
/// `min(1, clip / ||g||)`.
pub fn clip_gradient(g: &mut [f64], clip: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let factor = if norm > clip { clip / norm } else { 1.0 };
    if factor != 1.0 {
        g.iter_mut().for_each(|x| *x *= factor);
    }
    factor
}

#[derive(Debug, Clone, Copy)]
struct DpParams {
    clip_norm: f64,
    noise_multiplier: f64,
}

/// Stateful SGD driver. Holds the shuffle and noise streams so training can be
/// resumed across calls (federated rounds) without disturbing determinism.
pub struct LocalTrainer {
    cfg: TrainConfig,
    dp: Option<DpParams>,
    shuffle_rng: Rng,
    noise_rng: Rng,
    epochs_done: usize,
    steps_done: usize,
}

impl LocalTrainer {
    pub fn plain(cfg: &TrainConfig) -> Self {
        LocalTrainer {
            cfg: cfg.clone(),
            dp: None,
            shuffle_rng: rng_from_seed(mix_seed(cfg.seed, 0)),
            noise_rng: rng_from_seed(mix_seed(cfg.seed, 1)),
            epochs_done: 0,
            steps_done: 0,
        }
    }

    pub fn dp_sgd(cfg: &TrainConfig, privacy: &PrivacyConfig) -> Self {
        LocalTrainer {
            dp: Some(DpParams {
                clip_norm: privacy.clip_norm,
                noise_multiplier: privacy.noise_multiplier,
            }),
            ..Self::plain(cfg)
        }
    }

    /// Trainer matching a tier: plain SGD when epsilon is infinite.
    pub fn for_tier(cfg: &TrainConfig, privacy: &PrivacyConfig) -> Self {
        if privacy.is_private() {
            Self::dp_sgd(cfg, privacy)
        } else {
            Self::plain(cfg)
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Runs `epochs` epochs over `data`, returning the mean training loss after
    /// each one.
    pub fn run(&mut self, model: &mut TargetModel, data: &Dataset, epochs: usize) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Insufficient("training set is empty".into()));
        }
        if data.dim != model.input_dim {
            return Err(Error::Dimension {
                expected: model.input_dim,
                actual: data.dim,
            });
        }
        if let Some(r) = data.records.iter().find(|r| r.task_label >= model.classes) {
            return Err(Error::config(
                "task_label",
                format!("record {} has label {} >= {}", r.id, r.task_label, model.classes),
            ));
        }
        let n = data.len();
        let p = model.params.len();
        let bs = self.cfg.batch_size(n);
        let (lr, wd) = (self.cfg.learning_rate, self.cfg.weight_decay);
        let mut order: Vec<usize> = Vec::with_capacity(n);
        let mut sum = vec![0.0; p];
        let mut g = vec![0.0; p];
        let mut history = Vec::with_capacity(epochs);

        for _ in 0..epochs {
            self.epochs_done += 1;
            // fresh permutation each epoch, so splitting a run across calls
            // does not change the batches
            order.clear();
            order.extend(0..n);
            order.shuffle(&mut self.shuffle_rng);
            for batch in order.chunks(bs) {
                sum.iter_mut().for_each(|s| *s = 0.0);
                for &i in batch {
                    let r = &data.records[i];
                    model.sample_gradient(&r.features, r.task_label, &mut g);
                    let factor = match self.dp {
                        Some(dp) => clip_gradient(&mut g, dp.clip_norm),
                        None => 1.0,
                    };
                    debug_assert!(factor <= 1.0);
                    for (s, gi) in sum.iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
                if let Some(dp) = self.dp {
                    if dp.noise_multiplier > 0.0 {
                        let std = dp.noise_multiplier * dp.clip_norm;
                        for s in sum.iter_mut() {
                            *s += std * self.noise_rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
                let b = batch.len() as f64;
                for (w, s) in model.params.iter_mut().zip(&sum) {
                    *w -= lr * (s / b + wd * *w);
                }
                self.steps_done += 1;
            }
            let loss = model.mean_loss(data);
            if !loss.is_finite() || model.params.iter().any(|w| !w.is_finite()) {
                return Err(Error::Divergence {
                    epoch: self.epochs_done,
                    loss,
                });
            }
            history.push(loss);
        }
        Ok(history)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedTarget {
    pub model: TargetModel,
    /// Mean training cross-entropy after every epoch.
    pub loss_history: Vec<f64>,
    /// Privacy parameters actually used (steps filled in).
    pub privacy: PrivacyConfig,
}

fn init_for(cfg: &TrainConfig, data: &Dataset) -> TargetModel {
    TargetModel::init(cfg.architecture, data.dim, data.classes, mix_seed(cfg.seed, 2))
}

/// Non-private training (epsilon = infinity) on every record of `data`.
pub fn train_plain(data: &Dataset, cfg: &TrainConfig) -> Result<TrainedTarget> {
    cfg.validate()?;
    let mut model = init_for(cfg, data);
    let mut trainer = LocalTrainer::plain(cfg);
    let loss_history = trainer.run(&mut model, data, cfg.epochs)?;
    Ok(TrainedTarget {
        model,
        loss_history,
        privacy: PrivacyConfig {
            steps: trainer.steps_done(),
            ..PrivacyConfig::no_dp()
        },
    })
}

/// DP-SGD training with per-sample clipping and Gaussian noise of standard
/// deviation `noise_multiplier * clip_norm` on each batch's gradient sum.
pub fn train_dp_sgd(data: &Dataset, cfg: &TrainConfig, privacy: &PrivacyConfig) -> Result<TrainedTarget> {
    cfg.validate()?;
    if !(privacy.clip_norm > 0.0) || !(privacy.noise_multiplier >= 0.0) {
        return Err(Error::config("privacy", "clip_norm must be > 0 and noise_multiplier >= 0"));
    }
    if privacy.noise_multiplier > 0.0 && privacy.clip_norm.is_infinite() {
        return Err(Error::config("clip_norm", "must be finite when noise is added"));
    }
    let mut model = init_for(cfg, data);
    let mut trainer = LocalTrainer::dp_sgd(cfg, privacy);
    let loss_history = trainer.run(&mut model, data, cfg.epochs)?;
    Ok(TrainedTarget {
        model,
        loss_history,
        privacy: PrivacyConfig {
            steps: trainer.steps_done(),
            ..privacy.clone()
        },
    })
}

/// Trains according to the tier: plain when epsilon is infinite.
pub fn train_for_tier(data: &Dataset, cfg: &TrainConfig, privacy: &PrivacyConfig) -> Result<TrainedTarget> {
    if privacy.is_private() {
        train_dp_sgd(data, cfg, privacy)
    } else {
        train_plain(data, cfg)
    }
}

/// Deterministic shuffled split into `(train, test)` with
/// `round(test_fraction * n)` test records.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_test = (test_fraction * data.len() as f64).round() as usize;
    let (test, train) = idx.split_at(n_test);
    (data.select(train), data.select(test))
}

/// Black-box query results: one probability row per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub record_ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(record_ids: Vec<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if record_ids.len() != probs.len() {
            return Err(Error::Dimension {
                expected: record_ids.len(),
                actual: probs.len(),
            });
        }
        let k = probs.first().map_or(0, Vec::len);
        for (id, row) in record_ids.iter().zip(&probs) {
            if row.len() != k {
                return Err(Error::Dimension {
                    expected: k,
                    actual: row.len(),
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::config(
                    "probs",
                    format!("row for {id} is not a probability vector (sum {s})"),
                ));
            }
        }
        Ok(PredictionMatrix { record_ids, probs })
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Vec<&[f64]>> {
        let index: std::collections::HashMap<&str, usize> = self
            .record_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let missing: Vec<&str> = ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).copied().collect();
            return Err(Error::Join(format!(
                "{} record ids have no prediction: {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 10 { ", ..." } else { "" }
            )));
        }
        Ok(ids.iter().map(|id| self.probs[index[id.as_str()]].as_slice()).collect())
    }
}

pub fn predict_proba(model: &TargetModel, records: &[Record]) -> Result<PredictionMatrix> {
    let mut probs = Vec::with_capacity(records.len());
    for r in records {
        model.check_dim(&r.features)?;
        probs.push(model.predict_one(&r.features));
    }
    Ok(PredictionMatrix {
        record_ids: records.iter().map(|r| r.id.clone()).collect(),
        probs,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    architecture: Architecture,
    input_dim: usize,
    classes: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn model_to_json(model: &TargetModel) -> Result<String> {
    let mut offset = 0;
    let layers = model
        .layers()
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let values = model.params[offset..offset + len].to_vec();
            offset += len;
            LayerFile {
                name: name.to_string(),
                shape,
                values,
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&ModelFile {
        architecture: model.architecture,
        input_dim: model.input_dim,
        classes: model.classes,
        layers,
    })?)
}

pub fn model_from_json(text: &str) -> Result<TargetModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    let mut model = TargetModel::init(file.architecture, file.input_dim, file.classes, 0);
    let expected = model.layers();
    if expected.len() != file.layers.len() {
        return Err(Error::config("layers", "layer count does not match architecture"));
    }
    let mut params = Vec::with_capacity(model.params.len());
    for ((name, shape), layer) in expected.iter().zip(&file.layers) {
        if layer.name != *name || layer.shape != *shape {
            return Err(Error::config(
                "layers",
                format!("expected {name} {shape:?}, found {} {:?}", layer.name, layer.shape),
            ));
        }
        if layer.values.len() != shape.iter().product::<usize>() {
            return Err(Error::config("layers", format!("{name}: wrong value count")));
        }
        params.extend_from_slice(&layer.values);
    }
    model.params = params;
    Ok(model)
}

pub fn save_model(model: &TargetModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TargetModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_separable() -> Dataset {
        // two classes split on the sign of the first coordinate
        let records = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                let mag = 1.0 + (i as f64) * 0.05;
                Record {
                    id: format!("r{i}"),
                    features: vec![s * mag, ((i * 7) % 5) as f64 * 0.1 - 0.2],
                    task_label: if s > 0.0 { 1 } else { 0 },
                }
            })
            .collect();
        Dataset::new(2, 2, records).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let data = toy_separable();
        let t = train_plain(&data, &TrainConfig::default()).unwrap();
        assert!(t.model.accuracy(&data) >= 0.99);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_plain(&toy_separable(), &cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn plain_training_is_deterministic() {
        let cfg = TrainConfig {
            architecture: Architecture::Mlp { hidden: 8 },
            ..TrainConfig::default()
        };
        let a = train_plain(&toy_separable(), &cfg).unwrap();
        let b = train_plain(&toy_separable(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn clip_rule() {
        let mut g = vec![0.0, 4.0];
        assert_eq!(clip_gradient(&mut g, 2.0), 0.5);
        assert_eq!(g, vec![0.0, 2.0]);
        let mut g = vec![1.0, 0.0];
        assert_eq!(clip_gradient(&mut g, 2.0), 1.0);
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy_loss(&[0.0, 1.0, 0.0, 0.0], 1), 0.0);
        assert!((cross_entropy_loss(&[0.25; 4], 2) - 4f64.ln()).abs() < 1e-12);
        let floored = cross_entropy_loss(&[1.0, 0.0], 1);
        assert!((floored - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let m = TargetModel::init(Architecture::Logistic, 3, 4, 0);
        let r = Record {
            id: "x".into(),
            features: vec![1.0, -2.0, 0.5],
            task_label: 0,
        };
        let p = predict_proba(&m, &[r]).unwrap();
        assert_eq!(p.probs[0], vec![0.25; 4]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = TargetModel::init(Architecture::Logistic, 3, 4, 0);
        let r = Record {
            id: "x".into(),
            features: vec![1.0],
            task_label: 0,
        };
        assert!(matches!(predict_proba(&m, &[r]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn model_json_round_trip() {
        let m = TargetModel::init(Architecture::Mlp { hidden: 5 }, 3, 4, 9);
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn privacy_config_invariants() {
        assert!(PrivacyConfig::no_dp().validate().is_ok());
        let bad = PrivacyConfig {
            noise_multiplier: 1.0,
            ..PrivacyConfig::no_dp()
        };
        assert!(bad.validate().is_err());
        let p = PrivacyConfig::for_epsilon(10.0, 100, 1e-5, 2.0).unwrap();
        assert!(p.validate().is_ok());
        let json = serde_json::to_string(&PrivacyConfig {
            clip_norm: f64::INFINITY,
            ..PrivacyConfig::no_dp()
        })
        .unwrap();
        let back: PrivacyConfig = serde_json::from_str(&json).unwrap();
        assert!(back.clip_norm.is_infinite());
    }

    #[test]
    fn batch_size_uses_divisor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size(40), 3);
        assert_eq!(cfg.batches_per_epoch(40), 14);
        assert_eq!(cfg.planned_steps(40), 1400);
        assert_eq!(cfg.batch_size(10), 1);
    }
}
