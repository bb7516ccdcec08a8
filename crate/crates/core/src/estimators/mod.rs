//! The seven base membership estimators.
//!
//! Each consumes an attack input (target probabilities followed by the one-hot
//! task label) and emits a membership probability in `[0, 1]`. They are
//! trained on noisy labels: relevant records as members, external records as
//! non-members.

pub mod boosting;
pub mod forest;
pub mod knn;
pub mod linear;
pub mod nn;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;
use boosting::{BoostParams, GradientBoostedTrees};
use forest::{ForestParams, RandomForest};
use knn::Knn;
use linear::{LinearParams, LinearSvm, LogisticRegression};
use nn::{NeuralNet, NnParams};
use tree::{ClassificationTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseEstimatorKind {
    Nn,
    Rf,
    Dt,
    Gb,
    Knn,
    Svm,
    Lr,
}

impl BaseEstimatorKind {
    /// All kinds in meta-feature order.
    pub const ALL: [BaseEstimatorKind; 7] = [
        BaseEstimatorKind::Nn,
        BaseEstimatorKind::Rf,
        BaseEstimatorKind::Dt,
        BaseEstimatorKind::Gb,
        BaseEstimatorKind::Knn,
        BaseEstimatorKind::Svm,
        BaseEstimatorKind::Lr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaseEstimatorKind::Nn => "NN",
            BaseEstimatorKind::Rf => "RF",
            BaseEstimatorKind::Dt => "DT",
            BaseEstimatorKind::Gb => "GB",
            BaseEstimatorKind::Knn => "KNN",
            BaseEstimatorKind::Svm => "SVM",
            BaseEstimatorKind::Lr => "LR",
        }
    }

    /// Fixed offset used to derive this kind's seed from a master seed.
    pub fn seed_offset(&self) -> u64 {
        Self::ALL.iter().position(|k| k == self).unwrap() as u64
    }
}

/// Builds `probs ⊕ one_hot(label)`.
pub fn attack_input(probs: &[f64], label: usize) -> Vec<f64> {
    let k = probs.len();
    let mut v = Vec::with_capacity(2 * k);
    v.extend_from_slice(probs);
    v.extend((0..k).map(|c| if c == label { 1.0 } else { 0.0 }));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    pub nn: NnParams,
    pub rf: ForestParams,
    pub dt: TreeParams,
    pub gb: BoostParams,
    pub knn_k: usize,
    pub svm: LinearParams,
    pub lr: LinearParams,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            nn: NnParams::default(),
            rf: ForestParams::default(),
            dt: TreeParams {
                max_depth: 5,
                min_samples_leaf: 2,
                max_features: None,
            },
            gb: BoostParams {
                rounds: 100,
                max_depth: 3,
                shrinkage: 0.1,
                lambda: 1.0,
                min_child_weight: 1e-3,
            },
            knn_k: 5,
            svm: LinearSvm::DEFAULT,
            lr: LogisticRegression::DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state")]
pub enum EstimatorState {
    Nn(NeuralNet),
    Rf(RandomForest),
    Dt(ClassificationTree),
    Gb(GradientBoostedTrees),
    Knn(Knn),
    Svm(LinearSvm),
    Lr(LogisticRegression),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimator {
    pub kind: BaseEstimatorKind,
    pub input_dim: usize,
    pub seed: u64,
    pub state: EstimatorState,
}

/// Fits one estimator. Labels are 1 for (assumed) members and 0 otherwise.
pub fn fit(
    kind: BaseEstimatorKind,
    inputs: &[Vec<f64>],
    labels: &[u8],
    seed: u64,
    params: &EstimatorParams,
) -> Result<FittedEstimator> {
    if inputs.len() != labels.len() {
        return Err(Error::Dimension {
            expected: inputs.len(),
            actual: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass(format!(
            "{} needs members and non-members ({pos} of {} labelled member)",
            kind.name(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::config("labels", format!("label {bad} is not 0/1")));
    }
    let input_dim = inputs[0].len();
    if let Some(row) = inputs.iter().find(|r| r.len() != input_dim) {
        return Err(Error::Dimension {
            expected: input_dim,
            actual: row.len(),
        });
    }
    let state = match kind {
        BaseEstimatorKind::Nn => EstimatorState::Nn(NeuralNet::fit(inputs, labels, &params.nn, seed)),
        BaseEstimatorKind::Rf => EstimatorState::Rf(RandomForest::fit(inputs, labels, &params.rf, seed)),
        BaseEstimatorKind::Dt => {
            let idx: Vec<usize> = (0..inputs.len()).collect();
            EstimatorState::Dt(ClassificationTree::fit(inputs, labels, &idx, &params.dt, None))
        }
        BaseEstimatorKind::Gb => EstimatorState::Gb(GradientBoostedTrees::fit(inputs, labels, &params.gb)?),
        BaseEstimatorKind::Knn => EstimatorState::Knn(Knn::fit(inputs, labels, params.knn_k)),
        BaseEstimatorKind::Svm => EstimatorState::Svm(LinearSvm::fit(inputs, labels, &params.svm)),
        BaseEstimatorKind::Lr => EstimatorState::Lr(LogisticRegression::fit(inputs, labels, &params.lr)),
    };
    Ok(FittedEstimator {
        kind,
        input_dim,
        seed,
        state,
    })
}

/// Fits all seven kinds, seeding each from `master_seed` by its fixed offset.
pub fn fit_all(
    inputs: &[Vec<f64>],
    labels: &[u8],
    master_seed: u64,
    params: &EstimatorParams,
) -> Result<Vec<FittedEstimator>> {
    BaseEstimatorKind::ALL
        .iter()
        .map(|&k| fit(k, inputs, labels, mix_seed(master_seed, k.seed_offset()), params))
        .collect()
}

impl FittedEstimator {
    /// Membership probability for one attack input.
    pub fn score(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: input.len(),
            });
        }
        let s = match &self.state {
            EstimatorState::Nn(m) => m.predict(input),
            EstimatorState::Rf(m) => m.predict(input),
            EstimatorState::Dt(m) => m.predict(input),
            EstimatorState::Gb(m) => m.predict_proba(input),
            EstimatorState::Knn(m) => m.predict(input),
            EstimatorState::Svm(m) => m.predict(input),
            EstimatorState::Lr(m) => m.predict(input),
        };
        debug_assert!(s.is_finite(), "{} produced {s}", self.kind.name());
        Ok(if s.is_nan() { 0.5 } else { s.clamp(0.0, 1.0) })
    }
}
