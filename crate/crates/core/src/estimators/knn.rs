use serde::{Deserialize, Serialize};

/// k-nearest neighbours under Euclidean distance; stores the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

impl Knn {
    pub fn fit(x: &[Vec<f64>], y: &[u8], k: usize) -> Self {
        Knn {
            k: k.max(1),
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    /// Member fraction among the `k` nearest training points. Distance ties go
    /// to the earlier training point.
    pub fn predict(&self, q: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, xi)| (xi.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(d.len());
        d[..k].iter().map(|&(_, i)| self.y[i] as f64).sum::<f64>() / k as f64
    }
}
