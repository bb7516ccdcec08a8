use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::util::{rng_from_seed, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for NnParams {
    fn default() -> Self {
        NnParams {
            hidden: 16,
            epochs: 300,
            learning_rate: 0.05,
        }
    }
}

/// One hidden ReLU layer with a logistic output, trained by per-sample SGD on
/// binary cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl NeuralNet {
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &NnParams, seed: u64) -> Self {
        let f = x.first().map_or(0, Vec::len);
        let h = params.hidden;
        let mut rng = rng_from_seed(seed);
        let s1 = (2.0 / f.max(1) as f64).sqrt();
        let s2 = (1.0 / h as f64).sqrt();
        let mut net = NeuralNet {
            w1: (0..h)
                .map(|_| (0..f).map(|_| s1 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
            b1: vec![0.0; h],
            w2: (0..h).map(|_| s2 * rng.sample::<f64, _>(StandardNormal)).collect(),
            b2: 0.0,
        };
        let lr = params.learning_rate;
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut pre = vec![0.0; h];
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let xi = &x[i];
                for j in 0..h {
                    pre[j] = net.b1[j] + net.w1[j].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                }
                let z = net.b2 + (0..h).map(|j| net.w2[j] * pre[j].max(0.0)).sum::<f64>();
                let d = sigmoid(z) - y[i] as f64;
                for j in 0..h {
                    let a = pre[j].max(0.0);
                    let back = if pre[j] > 0.0 { d * net.w2[j] } else { 0.0 };
                    net.w2[j] -= lr * d * a;
                    if back != 0.0 {
                        for (w, &v) in net.w1[j].iter_mut().zip(xi) {
                            *w -= lr * back * v;
                        }
                        net.b1[j] -= lr * back;
                    }
                }
                net.b2 -= lr * d;
            }
        }
        net
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.b2
            + self
                .w1
                .iter()
                .zip(&self.b1)
                .zip(&self.w2)
                .map(|((w, b), v)| v * (b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).max(0.0))
                .sum::<f64>();
        sigmoid(z)
    }
}
