//! FedAvg simulation.
//!
//! Every round each client copies the global parameters, trains `E` local
//! epochs (plain SGD or DP-SGD, depending on the tier) and the server replaces
//! the global parameters with the example-count-weighted mean. Each client
//! keeps its own [`LocalTrainer`] across rounds, so with a single client the
//! run is the same computation as centralized training for `R·E` epochs.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::target::{LocalTrainer, PrivacyConfig, TargetModel, TrainConfig};
use crate::util::{fmt_f64, mix_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub tier: PrivacyConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            rounds: 50,
            local_epochs: 5,
            tier: PrivacyConfig::no_dp(),
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0,1)"));
        }
        self.tier.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based.
    pub round: usize,
    /// Global-model accuracy on the held-out split.
    pub accuracy: f64,
    /// Mean over clients of the final local-epoch training loss.
    pub mean_loss: f64,
}

/// Shuffles `population`, holds out `1 − train_fraction` of it and deals the
/// rest round-robin into `clients` equal-size IID partitions.
pub fn split_population(population: &Dataset, clients: usize, train_fraction: f64, seed: u64) -> Result<(Vec<Dataset>, Dataset)> {
    if clients == 0 {
        return Err(Error::config("clients", "must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..population.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_train = (train_fraction * population.len() as f64).round() as usize;
    if n_train < clients || n_train == population.len() {
        return Err(Error::Insufficient(format!(
            "{} records cannot give {clients} client partitions and a holdout",
            population.len()
        )));
    }
    let (train, holdout) = idx.split_at(n_train);
    let parts = (0..clients)
        .map(|c| {
            let mine: Vec<usize> = train.iter().skip(c).step_by(clients).copied().collect();
            population.select(&mine)
        })
        .collect();
    Ok((parts, population.select(holdout)))
}

/// Training configuration for client `c`: same hyperparameters, own seed.
pub fn client_train_config(train: &TrainConfig, fl_seed: u64, c: usize) -> TrainConfig {
    TrainConfig {
        seed: mix_seed(fl_seed, c as u64),
        ..train.clone()
    }
}

/// `w ← w_0 + Σ_c (n_c/N)(w_c − w_0)`. Equal inputs come back bit-for-bit.
pub fn weighted_average(params: &[&[f64]], weights: &[usize]) -> Vec<f64> {
    let total: usize = weights.iter().sum();
    let base = params[0];
    let mut out = base.to_vec();
    for (p, &n) in params.iter().zip(weights).skip(1) {
        let w = n as f64 / total as f64;
        for ((o, &pi), &b) in out.iter_mut().zip(p.iter()).zip(base) {
            *o += w * (pi - b);
        }
    }
    out
}

/// Runs `cfg.rounds` FedAvg rounds over `clients` and evaluates the global
/// model on `holdout` after each.
pub fn run_federated(clients: &[Dataset], holdout: &Dataset, train: &TrainConfig, cfg: &FlConfig) -> Result<Vec<RoundLog>> {
    Ok(run_federated_model(clients, holdout, train, cfg)?.0)
}

/// As [`run_federated`], also returning the final global model.
pub fn run_federated_model(
    clients: &[Dataset],
    holdout: &Dataset,
    train: &TrainConfig,
    cfg: &FlConfig,
) -> Result<(Vec<RoundLog>, TargetModel)> {
    cfg.validate()?;
    train.validate()?;
    if clients.is_empty() {
        return Err(Error::Insufficient("federated run needs at least one client".into()));
    }
    if let Some(c) = clients.iter().position(Dataset::is_empty) {
        return Err(Error::Insufficient(format!("client {c} holds no data")));
    }
    let configs: Vec<TrainConfig> = (0..clients.len())
        .map(|c| client_train_config(train, cfg.seed, c))
        .collect();
    let first = &clients[0];
    let mut global = TargetModel::init(train.architecture, first.dim, first.classes, mix_seed(configs[0].seed, 2));
    let mut trainers: Vec<LocalTrainer> = configs
        .iter()
        .map(|tc| LocalTrainer::for_tier(tc, &cfg.tier))
        .collect();
    let weights: Vec<usize> = clients.iter().map(Dataset::len).collect();
    let mut logs = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let results: Vec<(TargetModel, f64)> = trainers
            .par_iter_mut()
            .zip(clients.par_iter())
            .enumerate()
            .map(|(c, (trainer, data))| {
                let mut local = global.clone();
                let losses = trainer
                    .run(&mut local, data, cfg.local_epochs)
                    .map_err(|e| e.in_stage(format!("round {round}, client {c}")))?;
                Ok((local, *losses.last().unwrap()))
            })
            .collect::<Result<_>>()?;
        let params: Vec<&[f64]> = results.iter().map(|(m, _)| m.params.as_slice()).collect();
        global.params = weighted_average(&params, &weights);
        let mean_loss = results.iter().map(|(_, l)| l).sum::<f64>() / results.len() as f64;
        logs.push(RoundLog {
            round,
            accuracy: global.accuracy(holdout),
            mean_loss,
        });
    }
    Ok((logs, global))
}

/// Writes a `# tier=...,floor=...` metadata line, then `round,accuracy,mean_loss`.
pub fn export_curves(logs: &[RoundLog], tier: &str, classes: usize, path: &Path) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::Insufficient("no rounds to export".into()));
    }
    let mut out = format!("# tier={tier},floor={}\n", fmt_f64(1.0 / classes as f64));
    out.push_str("round,accuracy,mean_loss\n");
    for l in logs {
        out.push_str(&format!("{},{},{}\n", l.round, fmt_f64(l.accuracy), fmt_f64(l.mean_loss)));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFile {
    pub tier: String,
    pub floor: f64,
    pub logs: Vec<RoundLog>,
}

pub fn load_curves(path: &Path) -> Result<CurveFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |message: String| Error::Schema {
        source_name: path.display().to_string(),
        message,
    };
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| schema("missing metadata line".into()))?;
    let mut tier = None;
    let mut floor = None;
    for kv in meta.split(',') {
        match kv.split_once('=') {
            Some(("tier", v)) => tier = Some(v.to_string()),
            Some(("floor", v)) => floor = v.parse::<f64>().ok(),
            _ => return Err(schema(format!("bad metadata entry {kv:?}"))),
        }
    }
    if lines.next() != Some("round,accuracy,mean_loss") {
        return Err(schema("expected header round,accuracy,mean_loss".into()));
    }
    let mut logs = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = |message: String| Error::Row {
            source_name: path.display().to_string(),
            row: i + 3,
            message,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(row(format!("expected 3 fields, found {}", f.len())));
        }
        logs.push(RoundLog {
            round: f[0].parse().map_err(|e| row(format!("round: {e}")))?,
            accuracy: f[1].parse().map_err(|e| row(format!("accuracy: {e}")))?,
            mean_loss: f[2].parse().map_err(|e| row(format!("mean_loss: {e}")))?,
        });
    }
    Ok(CurveFile {
        tier: tier.ok_or_else(|| schema("metadata lacks tier".into()))?,
        floor: floor.ok_or_else(|| schema("metadata lacks floor".into()))?,
        logs,
    })
}
