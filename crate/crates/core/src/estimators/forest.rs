//! Bagged CART ensemble with per-split feature subsampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{ClassificationTree, TreeParams};
use crate::util::{mix_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features per split; `None` uses `floor(sqrt(f))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            max_depth: 6,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<ClassificationTree>,
}

/// Bootstrap sample of `n` indices drawn with replacement.
pub fn bootstrap(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[u8], params: &ForestParams, seed: u64) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let max_features = params
            .max_features
            .unwrap_or(((n_features as f64).sqrt().floor() as usize).max(1));
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            max_features: Some(max_features),
        };
        let trees = (0..params.trees)
            .map(|t| {
                let mut rng = rng_from_seed(mix_seed(seed, t as u64));
                let idx = bootstrap(x.len(), &mut rng);
                ClassificationTree::fit(x, y, &idx, &tree_params, Some(&mut rng))
            })
            .collect();
        RandomForest { trees }
    }

    /// Mean of the trees' leaf member fractions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tree_matches_dt_on_same_bootstrap() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 7) as f64, (i * 3 % 11) as f64, i as f64 * 0.1])
            .collect();
        let y: Vec<u8> = (0..30).map(|i| ((i * 5) % 3 == 0) as u8).collect();
        let params = ForestParams {
            trees: 1,
            max_depth: 4,
            min_samples_leaf: 2,
            max_features: Some(3),
        };
        let seed = 11;
        let rf = RandomForest::fit(&x, &y, &params, seed);

        let mut rng = rng_from_seed(mix_seed(seed, 0));
        let idx = bootstrap(x.len(), &mut rng);
        let bx: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let by: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        let all: Vec<usize> = (0..bx.len()).collect();
        let dt = ClassificationTree::fit(
            &bx,
            &by,
            &all,
            &TreeParams {
                max_depth: 4,
                min_samples_leaf: 2,
                max_features: None,
            },
            None,
        );
        for xi in &x {
            assert_eq!(rf.predict(xi), dt.predict(xi));
        }
    }
}
