//! Helpers shared by the integration tests: toy data and brute-force
//! reference implementations written independently of the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Two Gaussian blobs in 8 dimensions, centred at ±1.5 on every axis.
pub fn separable_blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let centre = if label == 1 { 1.5 } else { -1.5 };
        x.push(
            (0..8)
                .map(|_| centre + 0.5 * r.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        y.push(label);
    }
    (x, y)
}

/// Flips a `fraction` of labels, chosen without replacement.
pub fn flip_labels(y: &[u8], fraction: f64, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    let mut idx: Vec<usize> = (0..y.len()).collect();
    for i in (1..idx.len()).rev() {
        let j = r.random_range(0..=i);
        idx.swap(i, j);
    }
    let k = (fraction * y.len() as f64).round() as usize;
    let mut out = y.to_vec();
    for &i in &idx[..k] {
        out[i] = 1 - out[i];
    }
    out
}

/// Sort, then interpolate at rank `p/100 · (n−1)`.
pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (v.len() as f64 - 1.0);
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let frac = pos - i as f64;
    v[i] + frac * (v[i + 1] - v[i])
}

/// `(assigned column or None, column condition, row condition)` for every
/// row, evaluated directly from the rule's definition.
pub fn decide_oracle(scores: &[Vec<f64>], p: f64, lambda: f64) -> Vec<(Option<usize>, bool, bool)> {
    let m = scores[0].len();
    let thresholds: Vec<f64> = (0..m)
        .map(|j| percentile_oracle(&scores.iter().map(|r| r[j]).collect::<Vec<_>>(), p))
        .collect();
    scores
        .iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let best = row.iter().position(|&v| v == max).unwrap();
            let avg = row.iter().sum::<f64>() / m as f64;
            let col = row[best] > thresholds[best];
            let rw = row[best] > lambda * avg;
            ((col && rw).then_some(best), col, rw)
        })
        .collect()
}

/// Best TPR over every cut "score >= t" (t ranging over all scores plus +inf)
/// whose FPR is within budget.
pub fn tpr_oracle(scores: &[f64], labels: &[u8], budget: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.push(f64::INFINITY);
    let mut best = 0.0f64;
    for &t in &cuts {
        let tp = scores.iter().zip(labels).filter(|(s, &l)| **s >= t && l == 1).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, &l)| **s >= t && l == 0).count() as f64;
        if fp / neg <= budget {
            best = best.max(tp / pos);
        }
    }
    best
}

/// Mann-Whitney form of the AUC (ties count half).
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Standard normal CDF at 20 points, from an external statistics package.
pub const NORMAL_CDF_TABLE: [(f64, f64); 20] = [
    (-6.00, 9.865876450376946e-10),
    (-4.00, 3.167124183311986e-05),
    (-3.00, 0.0013498980316300933),
    (-2.50, 0.006209665325776132),
    (-2.00, 0.022750131948179195),
    (-1.50, 0.06680720126885807),
    (-1.00, 0.15865525393145707),
    (-0.75, 0.2266273523768682),
    (-0.50, 0.3085375387259869),
    (-0.25, 0.4012936743170763),
    (0.00, 0.5),
    (0.25, 0.5987063256829237),
    (0.50, 0.6914624612740131),
    (0.75, 0.7733726476231317),
    (1.00, 0.8413447460685429),
    (1.50, 0.9331927987311419),
    (2.00, 0.9772498680518208),
    (2.50, 0.9937903346742238),
    (3.00, 0.9986501019683699),
    (4.00, 0.9999683287581669),
];
