//! Linear estimators: logistic regression and a Platt-calibrated linear SVM.

use serde::{Deserialize, Serialize};

use crate::util::sigmoid;

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub const DEFAULT: LinearParams = LinearParams {
        iterations: 500,
        learning_rate: 0.1,
        l2: 1e-3,
    };

    /// Full-batch gradient descent on mean logistic loss plus `l2/2 ||w||²`
    /// (bias unpenalized).
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &LinearParams) -> Self {
        let f = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut w = vec![0.0; f];
        let mut b = 0.0;
        let mut gw = vec![0.0; f];
        for _ in 0..params.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let r = sigmoid(dot(&w, xi) + b) - yi as f64;
                for (g, &v) in gw.iter_mut().zip(xi) {
                    *g += r * v;
                }
                gb += r;
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= params.learning_rate * (g / n + params.l2 * *wj);
            }
            b -= params.learning_rate * gb / n;
        }
        LogisticRegression { weights: w, bias: b }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

/// One-dimensional logistic map `P(y=1|f) = 1 / (1 + exp(a·f + b))` fitted by
/// Platt's method with smoothed targets (Newton steps with backtracking).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaling {
    pub a: f64,
    pub b: f64,
}

impl PlattScaling {
    pub fn fit(decision: &[f64], y: &[u8]) -> Self {
        let prior1 = y.iter().filter(|&&v| v == 1).count() as f64;
        let prior0 = y.len() as f64 - prior1;
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let t: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();

        let objective = |a: f64, b: f64| -> f64 {
            decision
                .iter()
                .zip(&t)
                .map(|(&f, &ti)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        ti * z + (-z).exp().ln_1p()
                    } else {
                        (ti - 1.0) * z + z.exp().ln_1p()
                    }
                })
                .sum()
        };

        let mut a = 0.0;
        let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (&f, &ti) in decision.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        PlattScaling { a, b }
    }

    pub fn apply(&self, f: f64) -> f64 {
        sigmoid(-(self.a * f + self.b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub calibration: PlattScaling,
}

impl LinearSvm {
    pub const DEFAULT: LinearParams = LinearParams {
        iterations: 500,
        learning_rate: 0.01,
        l2: 1e-3,
    };

    /// Full-batch subgradient descent on mean hinge loss plus `l2/2 ||w||²`,
    /// then Platt calibration on the training decision values.
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &LinearParams) -> Self {
        let f = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut w = vec![0.0; f];
        let mut b = 0.0;
        let mut gw = vec![0.0; f];
        for _ in 0..params.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(y) {
                let s = if yi == 1 { 1.0 } else { -1.0 };
                if s * (dot(&w, xi) + b) < 1.0 {
                    for (g, &v) in gw.iter_mut().zip(xi) {
                        *g -= s * v;
                    }
                    gb -= s;
                }
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= params.learning_rate * (g / n + params.l2 * *wj);
            }
            b -= params.learning_rate * gb / n;
        }
        let decision: Vec<f64> = x.iter().map(|xi| dot(&w, xi) + b).collect();
        let calibration = PlattScaling::fit(&decision, y);
        LinearSvm {
            weights: w,
            bias: b,
            calibration,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.calibration.apply(self.decision(x))
    }
}
