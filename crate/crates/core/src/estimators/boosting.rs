//! Gradient-boosted trees on the logistic loss.
//!
//! Used both as the GB base estimator and as the stacking meta-classifier.
//! An ensemble can be *continued*: extra rounds are fitted starting from the
//! current margins and appended to a copy, leaving the original untouched.

use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, RegressionTreeParams};
use crate::error::{Error, Result};
use crate::util::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 100,
            max_depth: 3,
            shrinkage: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tree: RegressionTree,
    pub shrinkage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedTrees {
    pub n_features: usize,
    /// Log-odds of the training base rate.
    pub base_margin: f64,
    pub stages: Vec<Stage>,
}

impl GradientBoostedTrees {
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &BoostParams) -> Result<Self> {
        let pos = y.iter().filter(|&&v| v == 1).count();
        if x.is_empty() || pos == 0 || pos == y.len() {
            return Err(Error::SingleClass(format!(
                "boosting needs both classes ({pos} positives of {})",
                y.len()
            )));
        }
        let rate = pos as f64 / y.len() as f64;
        let start = GradientBoostedTrees {
            n_features: x[0].len(),
            base_margin: (rate / (1.0 - rate)).ln(),
            stages: Vec::new(),
        };
        Ok(start.continued(x, y, params.rounds, params))
    }

    /// A copy of `self` with `rounds` more stages fitted to `(x, y)` from the
    /// current margins. The shrinkage in `params` applies to the new stages.
    pub fn continued(&self, x: &[Vec<f64>], y: &[u8], rounds: usize, params: &BoostParams) -> Self {
        let mut out = self.clone();
        let mut margins: Vec<f64> = x.iter().map(|xi| self.margin(xi)).collect();
        let tree_params = RegressionTreeParams {
            max_depth: params.max_depth,
            lambda: params.lambda,
            min_child_weight: params.min_child_weight,
        };
        let mut grad = vec![0.0; x.len()];
        let mut hess = vec![0.0; x.len()];
        for _ in 0..rounds {
            for i in 0..x.len() {
                let p = sigmoid(margins[i]);
                grad[i] = p - y[i] as f64;
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let tree = RegressionTree::fit(x, &grad, &hess, &tree_params);
            for (m, xi) in margins.iter_mut().zip(x) {
                *m += params.shrinkage * tree.predict(xi);
            }
            out.stages.push(Stage {
                tree,
                shrinkage: params.shrinkage,
            });
        }
        out
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin
            + self
                .stages
                .iter()
                .map(|s| s.shrinkage * s.tree.predict(x))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub fn rounds(&self) -> usize {
        self.stages.len()
    }
}
