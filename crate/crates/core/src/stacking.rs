//! Stacking membership-inference attack.
//!
//! Pipeline, per target client:
//!
//! 1. fit the seven base estimators on relevant (label 1) vs external
//!    (label 0) attack inputs;
//! 2. describe every record by an 8-dimensional meta-feature vector: the seven
//!    membership probabilities followed by the target's cross-entropy loss;
//! 3. train one boosted meta-classifier on the colluding client's leaked
//!    ground truth;
//! 4. adapt it to each other client by appending boosting rounds fitted on that
//!    client's external records with all-zero labels;
//! 5. assign each challenge record to `c* = argmax_c P(X,c)` only when
//!    `P(X,c*)` beats the client's percentile threshold (column condition) and
//!    `λ` times the cross-client mean (row condition).
//!
//! Challenge records the colluding client owns are assigned from leaked truth
//! and skip inference.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledMembership, Membership, Record};
use crate::error::{Error, Result, StageExt};
use crate::eval::FoldPlan;
use crate::estimators::boosting::{BoostParams, GradientBoostedTrees};
use crate::estimators::{attack_input, fit_all, BaseEstimatorKind, EstimatorParams, FittedEstimator};
use crate::target::{cross_entropy_loss, PredictionMatrix, TargetModel};
use crate::util::{fmt_f64, mix_seed};

pub const META_DIM: usize = 8;
pub const META_FEATURE_NAMES: [&str; META_DIM] =
    ["p_NN", "p_RF", "p_DT", "p_GB", "p_KNN", "p_SVM", "p_LR", "L_CE"];

/// `[p_NN, p_RF, p_DT, p_GB, p_KNN, p_SVM, p_LR, L_CE]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector(pub [f64; META_DIM]);

impl MetaFeatureVector {
    pub fn estimator_scores(&self) -> &[f64] {
        &self.0[..7]
    }

    pub fn loss(&self) -> f64 {
        self.0[7]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Anything that answers black-box queries with class probabilities.
pub trait PredictionOracle {
    fn query(&self, record: &Record) -> Result<Vec<f64>>;
}

impl PredictionOracle for TargetModel {
    fn query(&self, record: &Record) -> Result<Vec<f64>> {
        if record.features.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: record.features.len(),
            });
        }
        Ok(self.predict_one(&record.features))
    }
}

/// Pre-recorded answers, looked up by record id.
pub struct RecordedPredictions {
    index: HashMap<String, Vec<f64>>,
}

impl RecordedPredictions {
    pub fn new(matrices: &[&PredictionMatrix]) -> Self {
        let index = matrices
            .iter()
            .flat_map(|m| m.record_ids.iter().cloned().zip(m.probs.iter().cloned()))
            .collect();
        RecordedPredictions { index }
    }

    /// Fails with the list of ids that have no recorded prediction.
    pub fn check_covers<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let missing: Vec<&str> = ids.into_iter().filter(|id| !self.index.contains_key(*id)).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let shown: Vec<&str> = missing.iter().take(10).copied().collect();
        Err(Error::Join(format!(
            "{} record ids have no prediction: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 10 { ", ..." } else { "" }
        )))
    }
}

impl PredictionOracle for RecordedPredictions {
    fn query(&self, record: &Record) -> Result<Vec<f64>> {
        self.index
            .get(&record.id)
            .cloned()
            .ok_or_else(|| Error::Join(format!("no prediction for record {}", record.id)))
    }
}

/// Queries the target and all seven estimators for one record.
pub fn extract_meta_features(
    target: &dyn PredictionOracle,
    estimators: &[FittedEstimator],
    record: &Record,
) -> Result<MetaFeatureVector> {
    let probs = target.query(record)?;
    meta_features_from_probs(&probs, record.task_label, estimators)
}

pub fn meta_features_from_probs(
    probs: &[f64],
    task_label: usize,
    estimators: &[FittedEstimator],
) -> Result<MetaFeatureVector> {
    if estimators.len() != 7
        || estimators
            .iter()
            .zip(BaseEstimatorKind::ALL)
            .any(|(e, k)| e.kind != k)
    {
        return Err(Error::config(
            "estimators",
            "expected the seven base estimators in NN, RF, DT, GB, KNN, SVM, LR order",
        ));
    }
    if task_label >= probs.len() {
        return Err(Error::config("task_label", format!("{task_label} >= {}", probs.len())));
    }
    let input = attack_input(probs, task_label);
    let mut v = [0.0; META_DIM];
    for (slot, est) in v.iter_mut().zip(estimators) {
        *slot = est.score(&input)?;
    }
    v[7] = cross_entropy_loss(probs, task_label);
    Ok(MetaFeatureVector(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDataset {
    pub record_ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

impl MetaDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }
}

/// Meta-training set from the colluding client's point of view: its known
/// members are positives; every other leaked record and all of its external
/// records are negatives. Each labelled record appears once.
pub fn build_meta_dataset(
    leaked: &[LabeledMembership],
    colluding: usize,
    external_ids: &[String],
    features: &HashMap<String, MetaFeatureVector>,
) -> Result<MetaDataset> {
    if leaked.is_empty() {
        return Err(Error::Insufficient(format!(
            "no leaked ground truth for colluding client {colluding}"
        )));
    }
    let mut seen = HashSet::new();
    let mut out = MetaDataset {
        record_ids: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    let labelled = leaked
        .iter()
        .map(|m| (m.record_id.as_str(), m.member_of == Some(colluding)))
        .chain(external_ids.iter().map(|id| (id.as_str(), false)));
    for (id, member) in labelled {
        if !seen.insert(id) {
            continue;
        }
        let f = features
            .get(id)
            .ok_or_else(|| Error::Join(format!("no meta features for record {id}")))?;
        out.record_ids.push(id.to_string());
        out.x.push(f.0.to_vec());
        out.y.push(member as u8);
    }
    let pos = out.positives();
    if pos == 0 {
        return Err(Error::Insufficient(format!(
            "colluding client {colluding} has no known members; meta-training impossible"
        )));
    }
    if pos == out.len() {
        return Err(Error::Insufficient(format!(
            "colluding client {colluding} has no known non-members"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaParams {
    pub boost: BoostParams,
    pub adapt_rounds: usize,
    pub adapt_shrinkage: f64,
}

impl Default for MetaParams {
    fn default() -> Self {
        MetaParams {
            boost: BoostParams::default(),
            adapt_rounds: 20,
            adapt_shrinkage: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub ensemble: GradientBoostedTrees,
    /// Stages appended by adaptation (0 for the base model).
    pub adapted_rounds: usize,
    pub seed: u64,
}

impl MetaModel {
    pub fn predict(&self, f: &MetaFeatureVector) -> f64 {
        self.ensemble.predict_proba(f.as_slice())
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.ensemble.predict_proba(x)
    }
}

/// Boosted meta-classifier. Fitting is deterministic; `seed` is kept for
/// provenance.
pub fn fit_meta(x: &[Vec<f64>], y: &[u8], params: &MetaParams, seed: u64) -> Result<MetaModel> {
    if let Some(row) = x.iter().find(|r| r.len() != META_DIM) {
        return Err(Error::Dimension {
            expected: META_DIM,
            actual: row.len(),
        });
    }
    Ok(MetaModel {
        ensemble: GradientBoostedTrees::fit(x, y, &params.boost)?,
        adapted_rounds: 0,
        seed,
    })
}

/// Continues boosting from `base` on a client's external records (all
/// labelled non-member). Returns a new model; `base` is not modified.
pub fn adapt_to_client(base: &MetaModel, external: &[MetaFeatureVector], params: &MetaParams) -> Result<MetaModel> {
    if external.is_empty() {
        return Err(Error::Insufficient("adaptation needs at least one external record".into()));
    }
    let x: Vec<Vec<f64>> = external.iter().map(|f| f.0.to_vec()).collect();
    let y = vec![0u8; x.len()];
    let step = BoostParams {
        shrinkage: params.adapt_shrinkage,
        ..params.boost
    };
    Ok(MetaModel {
        ensemble: base.ensemble.continued(&x, &y, params.adapt_rounds, &step),
        adapted_rounds: base.adapted_rounds + params.adapt_rounds,
        seed: base.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionRuleConfig {
    pub percentile: f64,
    pub lambda: f64,
}

impl Default for DecisionRuleConfig {
    fn default() -> Self {
        DecisionRuleConfig {
            percentile: 55.0,
            lambda: 1.5,
        }
    }
}

impl DecisionRuleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::config("percentile", "must lie in (0,100)"));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 1"));
        }
        Ok(())
    }
}

/// Linear-interpolation percentile at rank `p/100 · (n−1)` of the sorted
/// values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty list");
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    s[lo] + (rank - lo as f64) * (s[hi] - s[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionSource {
    /// Decided by the two-condition rule.
    Rule,
    /// Colluding client's own member, assigned from leaked truth.
    Leaked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDecision {
    pub record_id: String,
    /// `P(X,c)` for each scored client, in [`ScoreMatrix::clients`] order.
    pub scores: Vec<f64>,
    pub assignment: Membership,
    pub column_ok: bool,
    pub row_ok: bool,
    pub source: DecisionSource,
}

/// Per-record, per-client membership scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub record_ids: Vec<String>,
    pub clients: Vec<usize>,
    /// `scores[i][j]` is `P(record i, clients[j])`.
    pub scores: Vec<Vec<f64>>,
}

/// Applies the two-condition rule with given per-column thresholds.
pub fn decide_with_thresholds(matrix: &ScoreMatrix, thresholds: &[f64], lambda: f64) -> Vec<AttackDecision> {
    let m = matrix.clients.len();
    matrix
        .record_ids
        .iter()
        .zip(&matrix.scores)
        .map(|(id, row)| {
            let mut best = 0;
            for j in 1..m {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let mean = row.iter().sum::<f64>() / m as f64;
            let column_ok = row[best] > thresholds[best];
            let row_ok = row[best] > lambda * mean;
            AttackDecision {
                record_id: id.clone(),
                scores: row.clone(),
                assignment: if column_ok && row_ok {
                    Membership::client(matrix.clients[best])
                } else {
                    Membership::NON_MEMBER
                },
                column_ok,
                row_ok,
                source: DecisionSource::Rule,
            }
        })
        .collect()
}

/// Per-client column thresholds over all scored records.
pub fn column_thresholds(matrix: &ScoreMatrix, percentile_rank: f64) -> Vec<f64> {
    (0..matrix.clients.len())
        .map(|j| {
            let col: Vec<f64> = matrix.scores.iter().map(|r| r[j]).collect();
            percentile(&col, percentile_rank)
        })
        .collect()
}

/// Two-condition assignment. Returns the decisions and the per-client
/// thresholds.
pub fn decide(matrix: &ScoreMatrix, rule: &DecisionRuleConfig) -> Result<(Vec<AttackDecision>, Vec<f64>)> {
    rule.validate()?;
    if matrix.clients.len() < 2 {
        return Err(Error::Insufficient(
            "the decision rule needs at least two scored clients".into(),
        ));
    }
    if matrix.record_ids.is_empty() {
        return Ok((Vec::new(), vec![f64::NAN; matrix.clients.len()]));
    }
    if let Some(row) = matrix.scores.iter().find(|r| r.len() != matrix.clients.len()) {
        return Err(Error::Dimension {
            expected: matrix.clients.len(),
            actual: row.len(),
        });
    }
    let thresholds = column_thresholds(matrix, rule.percentile);
    Ok((decide_with_thresholds(matrix, &thresholds, rule.lambda), thresholds))
}

// ---------------------------------------------------------------------------
// End-to-end attack
// ---------------------------------------------------------------------------

/// What the attacker holds for one client: its auxiliary pools and black-box
/// answers for every relevant, external and challenge record.
pub struct ClientView<'a> {
    pub relevant: &'a Dataset,
    pub external: &'a Dataset,
    pub oracle: &'a (dyn PredictionOracle + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub rule: DecisionRuleConfig,
    pub estimators: EstimatorParams,
    pub meta: MetaParams,
    /// Folds used to give relevant and external records meta-features from
    /// estimators that were not trained on them. `None` scores them in-sample.
    pub cross_fit_folds: Option<usize>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            rule: DecisionRuleConfig::default(),
            estimators: EstimatorParams::default(),
            meta: MetaParams::default(),
            cross_fit_folds: Some(5),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackProvenance {
    pub seed: u64,
    pub estimator_seeds: BTreeMap<usize, u64>,
    pub meta_seed: u64,
    pub colluding_client: usize,
    pub rule: DecisionRuleConfig,
    /// `P_thr` per non-colluding client.
    pub thresholds: BTreeMap<usize, f64>,
    pub meta_rows: usize,
    pub meta_members: usize,
    pub leaked_assignments: usize,
    pub estimators: EstimatorParams,
    pub meta: MetaParams,
    pub cross_fit_folds: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    /// One decision per challenge record, in challenge order.
    pub decisions: Vec<AttackDecision>,
    pub scores: ScoreMatrix,
    pub provenance: AttackProvenance,
    /// The colluding client's labelled meta-dataset (used for TPR@FPR).
    pub colluding_meta: MetaDataset,
    pub base_meta: MetaModel,
}

struct ClientFeatures {
    features: HashMap<String, MetaFeatureVector>,
    estimator_seed: u64,
}

fn client_features(view: &ClientView<'_>, challenge: &Dataset, seed: u64, cfg: &AttackConfig) -> Result<ClientFeatures> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut pool: Vec<(&Record, Vec<f64>)> = Vec::new();
    for (data, label) in [(view.relevant, 1u8), (view.external, 0u8)] {
        for r in &data.records {
            let p = view.oracle.query(r)?;
            inputs.push(attack_input(&p, r.task_label));
            labels.push(label);
            pool.push((r, p));
        }
    }
    let estimators = fit_all(&inputs, &labels, seed, &cfg.estimators)?;
    let mut features = HashMap::with_capacity(pool.len() + challenge.len());

    // pool records: scored by estimators that did not see them
    match cfg.cross_fit_folds {
        Some(k) => {
            let plan = FoldPlan::new(&labels, k, true, mix_seed(seed, 100))?;
            for f in 0..k {
                let (train, test) = plan.train_test(f);
                let tx: Vec<Vec<f64>> = train.iter().map(|&i| inputs[i].clone()).collect();
                let ty: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
                let fold_est = fit_all(&tx, &ty, mix_seed(seed, 101 + f as u64), &cfg.estimators)
                    .map_err(|e| e.in_stage(format!("cross-fit fold {f}")))?;
                for i in test {
                    let (r, p) = &pool[i];
                    features.insert(r.id.clone(), meta_features_from_probs(p, r.task_label, &fold_est)?);
                }
            }
        }
        None => {
            for (r, p) in &pool {
                features.insert(r.id.clone(), meta_features_from_probs(p, r.task_label, &estimators)?);
            }
        }
    }
    for r in &challenge.records {
        if features.contains_key(&r.id) {
            continue;
        }
        let p = view.oracle.query(r)?;
        features.insert(r.id.clone(), meta_features_from_probs(&p, r.task_label, &estimators)?);
    }
    Ok(ClientFeatures {
        features,
        estimator_seed: seed,
    })
}

/// Runs the full stacking attack over all clients.
pub fn run_attack(
    views: &[ClientView<'_>],
    challenge: &Dataset,
    leaked: &[LabeledMembership],
    colluding: usize,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    cfg.rule.validate()?;
    if cfg.cross_fit_folds.is_some_and(|k| k < 2) {
        return Err(Error::config("cross_fit_folds", "must be at least 2 when set"));
    }
    let c_count = views.len();
    if colluding >= c_count {
        return Err(Error::config("colluding_client", format!("{colluding} >= {c_count} clients")));
    }
    if c_count < 3 {
        return Err(Error::Insufficient(
            "need the colluding client plus at least two target clients".into(),
        ));
    }
    let est_seed = mix_seed(cfg.seed, 3);
    let per_client: Vec<ClientFeatures> = views
        .par_iter()
        .enumerate()
        .map(|(c, view)| {
            client_features(view, challenge, mix_seed(est_seed, c as u64), cfg)
                .stage(|| format!("base estimators (client {c})"))
        })
        .collect::<Result<_>>()?;

    let coll_features = &per_client[colluding].features;
    let meta_set = build_meta_dataset(leaked, colluding, &views[colluding].external.ids(), coll_features)
        .stage(|| "meta dataset".into())?;
    let meta_seed = mix_seed(cfg.seed, 4);
    let base = fit_meta(&meta_set.x, &meta_set.y, &cfg.meta, meta_seed).stage(|| "meta fit".into())?;

    let targets: Vec<usize> = (0..c_count).filter(|&c| c != colluding).collect();
    let adapted: Vec<MetaModel> = targets
        .par_iter()
        .map(|&c| {
            let ext: Vec<MetaFeatureVector> = views[c]
                .external
                .records
                .iter()
                .map(|r| per_client[c].features[&r.id])
                .collect();
            adapt_to_client(&base, &ext, &cfg.meta).stage(|| format!("adaptation (client {c})"))
        })
        .collect::<Result<_>>()?;

    let leaked_members: HashSet<&str> = leaked
        .iter()
        .filter(|m| m.member_of == Some(colluding))
        .map(|m| m.record_id.as_str())
        .collect();
    let inference: Vec<&Record> = challenge
        .records
        .iter()
        .filter(|r| !leaked_members.contains(r.id.as_str()))
        .collect();
    let matrix = ScoreMatrix {
        record_ids: inference.iter().map(|r| r.id.clone()).collect(),
        clients: targets.clone(),
        scores: inference
            .iter()
            .map(|r| {
                targets
                    .iter()
                    .zip(&adapted)
                    .map(|(&c, m)| m.predict(&per_client[c].features[&r.id]))
                    .collect()
            })
            .collect(),
    };
    let (rule_decisions, thresholds) = decide(&matrix, &cfg.rule).stage(|| "decision rule".into())?;

    let mut by_id: HashMap<&str, AttackDecision> =
        rule_decisions.into_iter().map(|d| (d.record_id.clone(), d)).map(|(id, d)| (challenge.get(&id).unwrap().id.as_str(), d)).collect();
    let decisions: Vec<AttackDecision> = challenge
        .records
        .iter()
        .map(|r| {
            by_id.remove(r.id.as_str()).unwrap_or_else(|| AttackDecision {
                record_id: r.id.clone(),
                scores: Vec::new(),
                assignment: Membership::client(colluding),
                column_ok: true,
                row_ok: true,
                source: DecisionSource::Leaked,
            })
        })
        .collect();

    let provenance = AttackProvenance {
        seed: cfg.seed,
        estimator_seeds: per_client
            .iter()
            .enumerate()
            .map(|(c, f)| (c, f.estimator_seed))
            .collect(),
        meta_seed,
        colluding_client: colluding,
        rule: cfg.rule,
        thresholds: targets.iter().copied().zip(thresholds.iter().copied()).collect(),
        meta_rows: meta_set.len(),
        meta_members: meta_set.positives(),
        leaked_assignments: decisions.iter().filter(|d| d.source == DecisionSource::Leaked).count(),
        estimators: cfg.estimators.clone(),
        meta: cfg.meta.clone(),
        cross_fit_folds: cfg.cross_fit_folds,
    };
    Ok(AttackOutcome {
        decisions,
        scores: matrix,
        provenance,
        colluding_meta: meta_set,
        base_meta: base,
    })
}

/// Writes `record_id,p_c{j}...,assignment,column_ok,row_ok`. Leaked
/// assignments have empty score and condition cells.
pub fn write_decisions_csv(decisions: &[AttackDecision], clients: &[usize], path: &Path) -> Result<()> {
    let mut out = String::from("record_id");
    for c in clients {
        out.push_str(&format!(",p_c{c}"));
    }
    out.push_str(",assignment,column_ok,row_ok\n");
    for d in decisions {
        out.push_str(&d.record_id);
        match d.source {
            DecisionSource::Rule => {
                for s in &d.scores {
                    out.push(',');
                    out.push_str(&fmt_f64(*s));
                }
                out.push_str(&format!(",{},{},{}\n", d.assignment, d.column_ok, d.row_ok));
            }
            DecisionSource::Leaked => {
                out.push_str(&",".repeat(clients.len()));
                out.push_str(&format!(",{},,\n", d.assignment));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix {
            record_ids: (0..rows.len()).map(|i| format!("r{i}")).collect(),
            clients: (0..rows[0].len()).collect(),
            scores: rows,
        }
    }

    #[test]
    fn dominant_client_assigned() {
        let m = matrix(vec![vec![0.9, 0.1, 0.1]]);
        let d = decide_with_thresholds(&m, &[0.2, 0.2, 0.2], 1.5);
        assert_eq!(d[0].assignment, Membership::client(0));
        assert!(d[0].column_ok && d[0].row_ok);
    }

    #[test]
    fn flat_row_is_non_member() {
        let m = matrix(vec![vec![0.4, 0.4, 0.4]]);
        let d = decide_with_thresholds(&m, &[0.0, 0.0, 0.0], 1.5);
        assert_eq!(d[0].assignment, Membership::NON_MEMBER);
        assert!(!d[0].row_ok);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert!((percentile(&v, 55.0) - 0.595).abs() < 1e-12);
        assert_eq!(percentile(&[3.0], 55.0), 3.0);
    }

    #[test]
    fn fewer_than_two_clients_rejected() {
        let m = matrix(vec![vec![0.5]]);
        assert!(decide(&m, &DecisionRuleConfig::default()).is_err());
    }

    #[test]
    fn meta_features_propagate_constants() {
        // seven estimators that all answer 0.5: KNN with k = n over a balanced set
        let x = vec![vec![0.0; 8], vec![1.0; 8]];
        let params = EstimatorParams {
            knn_k: 2,
            ..EstimatorParams::default()
        };
        let knn = crate::estimators::fit(BaseEstimatorKind::Knn, &x, &[0, 1], 0, &params).unwrap();
        let ests: Vec<FittedEstimator> = BaseEstimatorKind::ALL
            .iter()
            .map(|&k| FittedEstimator { kind: k, ..knn.clone() })
            .collect();
        let f = meta_features_from_probs(&[0.25; 4], 1, &ests).unwrap();
        assert_eq!(&f.0[..7], &[0.5; 7]);
        assert!((f.0[7] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(f.0.len(), META_DIM);
    }

    #[test]
    fn meta_dataset_requires_members() {
        let leaked = vec![LabeledMembership {
            record_id: "a".into(),
            member_of: None,
        }];
        let mut feats = HashMap::new();
        feats.insert("a".to_string(), MetaFeatureVector([0.0; 8]));
        assert!(matches!(
            build_meta_dataset(&leaked, 3, &[], &feats),
            Err(Error::Insufficient(_))
        ));
        assert!(build_meta_dataset(&[], 3, &[], &feats).is_err());
    }
}
