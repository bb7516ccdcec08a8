//! Binary decision trees shared by the tree-based estimators.
//!
//! [`ClassificationTree`] is a CART tree on Gini impurity whose leaves store
//! the member fraction of their training samples. [`RegressionTree`] is the
//! second-order tree used inside gradient boosting: splits maximize
//! `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)` and leaves hold `−G/(H+λ)`.
//!
//! Split ties are broken towards the lowest feature index, then the lowest
//! threshold. Samples go left when `x[feature] <= threshold`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::util::Rng;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn descend(nodes: &[Node], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match nodes[i] {
            Node::Leaf { value, .. } => return value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if x[feature] <= threshold { left } else { right },
        }
    }
}

/// Candidate features for one split; all of them unless `max_features` asks
/// for a random subset. Returned in ascending order.
fn candidate_features(n_features: usize, max_features: Option<usize>, rng: Option<&mut Rng>) -> Vec<usize> {
    match (max_features, rng) {
        (Some(m), Some(rng)) if m < n_features => {
            let mut f = sample(rng, n_features, m).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..n_features).collect(),
    }
}

/// Indices sorted by one feature; ties keep their relative order.
fn sorted_by(x: &[Vec<f64>], idx: &[usize], f: usize) -> Vec<usize> {
    let mut s = idx.to_vec();
    s.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTree {
    pub nodes: Vec<Node>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

impl ClassificationTree {
    /// Grows a tree on the samples listed in `idx` (duplicates allowed, as in
    /// a bootstrap). `rng` is only consulted when feature subsampling is on.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[u8],
        idx: &[usize],
        params: &TreeParams,
        mut rng: Option<&mut Rng>,
    ) -> Self {
        let mut nodes = Vec::new();
        let n_features = x.first().map_or(0, Vec::len);
        Self::grow(x, y, idx.to_vec(), 0, params, n_features, &mut rng, &mut nodes);
        ClassificationTree { nodes }
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        x: &[Vec<f64>],
        y: &[u8],
        idx: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        n_features: usize,
        rng: &mut Option<&mut Rng>,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| y[i] == 1).count();
        let me = nodes.len();
        nodes.push(Node::Leaf {
            value: if n == 0 { 0.5 } else { pos as f64 / n as f64 },
            samples: n,
        });
        if depth >= params.max_depth || n < 2 * params.min_samples_leaf || pos == 0 || pos == n {
            return me;
        }
        let parent = gini(pos as f64, n as f64) * n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for f in candidate_features(n_features, params.max_features, rng.as_deref_mut()) {
            let sorted = sorted_by(x, &idx, f);
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                left_pos += y[sorted[k]] as usize;
                let nl = k + 1;
                let (a, b) = (x[sorted[k]][f], x[sorted[k + 1]][f]);
                if a == b || nl < params.min_samples_leaf || n - nl < params.min_samples_leaf {
                    continue;
                }
                let nr = n - nl;
                let child = gini(left_pos as f64, nl as f64) * nl as f64
                    + gini((pos - left_pos) as f64, nr as f64) * nr as f64;
                let gain = parent - child;
                let threshold = 0.5 * (a + b);
                if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = Self::grow(x, y, l, depth + 1, params, n_features, rng, nodes);
        let right = Self::grow(x, y, r, depth + 1, params, n_features, rng, nodes);
        nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }

    /// Member fraction of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        descend(&self.nodes, x)
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fits leaf weights to first/second-order loss derivatives `grad`/`hess`.
    pub fn fit(x: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &RegressionTreeParams) -> Self {
        let mut nodes = Vec::new();
        let idx: Vec<usize> = (0..x.len()).collect();
        let n_features = x.first().map_or(0, Vec::len);
        Self::grow(x, grad, hess, idx, 0, params, n_features, &mut nodes);
        RegressionTree { nodes }
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        x: &[Vec<f64>],
        grad: &[f64],
        hess: &[f64],
        idx: Vec<usize>,
        depth: usize,
        params: &RegressionTreeParams,
        n_features: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let g: f64 = idx.iter().map(|&i| grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| hess[i]).sum();
        let me = nodes.len();
        nodes.push(Node::Leaf {
            value: -g / (h + params.lambda),
            samples: idx.len(),
        });
        if depth >= params.max_depth || idx.len() < 2 {
            return me;
        }
        let score = |g: f64, h: f64| g * g / (h + params.lambda);
        let parent = score(g, h);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..n_features {
            let sorted = sorted_by(x, &idx, f);
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..sorted.len() - 1 {
                gl += grad[sorted[k]];
                hl += hess[sorted[k]];
                let (a, b) = (x[sorted[k]][f], x[sorted[k + 1]][f]);
                let hr = h - hl;
                if a == b || hl < params.min_child_weight || hr < params.min_child_weight {
                    continue;
                }
                let gain = score(gl, hl) + score(g - gl, hr) - parent;
                if gain > MIN_GAIN && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = Self::grow(x, grad, hess, l, depth + 1, params, n_features, nodes);
        let right = Self::grow(x, grad, hess, r, depth + 1, params, n_features, nodes);
        nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        descend(&self.nodes, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(params_depth: usize) -> TreeParams {
        TreeParams {
            max_depth: params_depth,
            min_samples_leaf: 2,
            max_features: None,
        }
    }

    #[test]
    fn leaf_reports_member_fraction() {
        // one leaf with 3 members and 1 non-member
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.3]];
        let y = vec![1, 1, 0, 1];
        let t = ClassificationTree::fit(&x, &y, &[0, 1, 2, 3], &all(0), None);
        assert_eq!(t.predict(&[0.15]), 0.75);
    }

    #[test]
    fn splits_threshold_data() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..10).map(|i| (i >= 5) as u8).collect();
        let idx: Vec<usize> = (0..10).collect();
        let t = ClassificationTree::fit(&x, &y, &idx, &all(5), None);
        assert_eq!(t.depth(), 1);
        match t.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 4.5);
            }
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // features 0 and 1 are identical, so their gains tie exactly
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<u8> = (0..8).map(|i| (i >= 4) as u8).collect();
        let idx: Vec<usize> = (0..8).collect();
        let t = ClassificationTree::fit(&x, &y, &idx, &all(3), None);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y = vec![1, 0, 0, 0, 0];
        let t = ClassificationTree::fit(&x, &y, &[0, 1, 2, 3, 4], &all(5), None);
        for n in &t.nodes {
            if let Node::Leaf { samples, .. } = n {
                assert!(*samples >= 2);
            }
        }
    }

    #[test]
    fn regression_leaf_is_newton_step() {
        let x = vec![vec![0.0], vec![1.0]];
        let t = RegressionTree::fit(
            &x,
            &[0.5, 0.5],
            &[0.25, 0.25],
            &RegressionTreeParams {
                max_depth: 0,
                lambda: 1.0,
                min_child_weight: 0.0,
            },
        );
        assert!((t.predict(&[0.0]) - (-1.0 / 1.5)).abs() < 1e-12);
    }
}
