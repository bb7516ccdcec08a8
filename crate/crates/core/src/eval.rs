//! Metrics: challenge-assignment accuracy, step ROC and TPR at a fixed FPR,
//! stratified out-of-fold scoring, the pooled two-proportion z-test, and the
//! run report.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{LabeledMembership, Membership};
use crate::error::{Error, Result};
use crate::util::{fmt_f64, normal_sf, rng_from_seed};

/// Exact-match fraction of `assignments` against `truth`. Both must cover the
/// same record ids.
pub fn challenge_accuracy(assignments: &[(String, Membership)], truth: &[LabeledMembership]) -> Result<f64> {
    if assignments.len() != truth.len() {
        return Err(Error::Join(format!(
            "{} decisions for {} ground-truth records",
            assignments.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Insufficient("no ground-truth records".into()));
    }
    let decided: HashMap<&str, Membership> = assignments.iter().map(|(id, m)| (id.as_str(), *m)).collect();
    let mut correct = 0usize;
    for t in truth {
        let d = decided
            .get(t.record_id.as_str())
            .ok_or_else(|| Error::Join(format!("no decision for record {}", t.record_id)))?;
        correct += (d.0 == t.member_of) as usize;
    }
    Ok(correct as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Records scoring `>= threshold` are called members.
    #[serde(with = "crate::util::serde_float")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!(
            "ROC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::config("scores", "NaN score"));
    }
    Ok((pos, neg))
}

/// Step ROC: one point per distinct score (descending), preceded by the
/// empty-selection point at `+inf`. Tied scores enter together.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the step ROC.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pts = roc_curve(scores, labels)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
        .sum())
}

/// Largest TPR among ROC points whose FPR does not exceed `budget`. No
/// interpolation between points.
pub fn tpr_at_fpr(scores: &[f64], labels: &[u8], budget: f64) -> Result<f64> {
    Ok(roc_curve(scores, labels)?
        .iter()
        .filter(|p| p.fpr <= budget)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

/// Smallest nonzero FPR the curve reports.
pub fn min_nonzero_fpr(points: &[RocPoint]) -> Option<f64> {
    points.iter().map(|p| p.fpr).filter(|&f| f > 0.0).reduce(f64::min)
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr)));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
    /// Fold index per record.
    pub folds: Vec<usize>,
}

impl FoldPlan {
    /// Shuffles each class with `seed` and deals its records round-robin over
    /// the folds, continuing where the previous class stopped. Unstratified
    /// plans deal all records as one class.
    pub fn new(labels: &[u8], k: usize, stratified: bool, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::config("folds", "k must be at least 2"));
        }
        if k > labels.len() {
            return Err(Error::config("folds", format!("k = {k} exceeds {} records", labels.len())));
        }
        let mut rng = rng_from_seed(seed);
        let groups: Vec<Vec<usize>> = if stratified {
            [1u8, 0u8]
                .iter()
                .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
                .collect()
        } else {
            vec![(0..labels.len()).collect()]
        };
        let mut folds = vec![0; labels.len()];
        let mut next = 0;
        for mut g in groups {
            g.shuffle(&mut rng);
            for i in g {
                folds[i] = next;
                next = (next + 1) % k;
            }
        }
        Ok(FoldPlan {
            k,
            stratified,
            seed,
            folds,
        })
    }

    pub fn train_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.folds.len()).partition(|&i| self.folds[i] != fold)
    }
}

/// Out-of-fold scores: every record is scored once by a model fitted on the
/// other folds. `fit_predict(train_x, train_y, test_x)` returns one score per
/// test row.
pub fn oof_scores<F>(x: &[Vec<f64>], y: &[u8], plan: &FoldPlan, fit_predict: F) -> Result<Vec<f64>>
where
    F: Fn(&[Vec<f64>], &[u8], &[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    if x.len() != y.len() || plan.folds.len() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            actual: x.len().min(plan.folds.len()),
        });
    }
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = plan.train_test(f);
            let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let pos = ty.iter().filter(|&&v| v == 1).count();
            if pos == 0 || pos == ty.len() {
                return Err(Error::SingleClass(format!(
                    "fold {f} leaves a single-class training split; use fewer folds"
                )));
            }
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ex: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
            let s = fit_predict(&tx, &ty, &ex)?;
            if s.len() != test.len() {
                return Err(Error::Dimension {
                    expected: test.len(),
                    actual: s.len(),
                });
            }
            Ok((test, s))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![f64::NAN; y.len()];
    for (test, s) in per_fold {
        for (i, v) in test.into_iter().zip(s) {
            out[i] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
}

/// Pooled two-proportion z-test. Success counts are `round(p·n)`.
pub fn two_proportion_z(p1: f64, p2: f64, n1: usize, n2: usize) -> Result<ZTest> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::config("n", "sample sizes must be positive"));
    }
    for (name, p, n) in [("p1", p1, n1), ("p2", p2, n2)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(name, format!("{p} is not a proportion")));
        }
        let x = p * n as f64;
        if (x - x.round()).abs() > 0.51 {
            return Err(Error::config(name, format!("{p}·{n} is not near an integer count")));
        }
    }
    let x1 = (p1 * n1 as f64).round();
    let x2 = (p2 * n2 as f64).round();
    let pooled = (x1 + x2) / (n1 + n2) as f64;
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(Error::Insufficient(format!(
            "pooled proportion {pooled} leaves the z statistic undefined"
        )));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / se;
    Ok(ZTest {
        z,
        p_value: 2.0 * normal_sf(z.abs()),
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Makes an `Option` field mandatory in the input while still allowing `null`.
fn required<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRow {
    pub attack: String,
    pub challenge_accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// TPR at 1% / 3% FPR on the colluding client's labelled records, for
    /// attacks that produce a score.
    #[serde(deserialize_with = "required")]
    pub tpr_at_1pct_fpr: Option<f64>,
    #[serde(deserialize_with = "required")]
    pub tpr_at_3pct_fpr: Option<f64>,
    #[serde(deserialize_with = "required")]
    pub auc: Option<f64>,
    #[serde(deserialize_with = "required")]
    pub min_nonzero_fpr: Option<f64>,
    #[serde(deserialize_with = "required")]
    pub roc_file: Option<String>,
    pub decisions_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySummary {
    /// `null` for the non-private tier.
    #[serde(deserialize_with = "required")]
    pub target_epsilon: Option<f64>,
    pub delta: f64,
    #[serde(with = "crate::util::serde_float")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub steps: usize,
    /// Accountant's epsilon at the realised noise and step count.
    #[serde(deserialize_with = "required")]
    pub epsilon_spent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSummary {
    pub client: usize,
    pub train_accuracy: f64,
    pub member_loss: f64,
    pub external_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlSummary {
    pub local_epochs: usize,
    pub rounds: usize,
    pub noise_multiplier: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub curve_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierReport {
    pub tier: String,
    pub privacy: PrivacySummary,
    pub targets: Vec<TargetSummary>,
    pub attacks: Vec<AttackRow>,
    pub z_vs_floor: ZTest,
    pub provenance: crate::stacking::AttackProvenance,
    pub fl: Vec<FlSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZTestRow {
    pub label: String,
    pub p1: f64,
    pub p2: f64,
    pub n1: usize,
    pub n2: usize,
    /// `null` when the pooled proportion is 0 or 1.
    #[serde(deserialize_with = "required")]
    pub result: Option<ZTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSummary {
    pub clients: usize,
    pub classes: usize,
    pub dim: usize,
    pub colluding_client: usize,
    pub relevant_sizes: Vec<usize>,
    pub external_sizes: Vec<usize>,
    pub challenge_size: usize,
    pub random_floor: f64,
    pub meta_labelled: usize,
    pub meta_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub format_version: u32,
    pub master_seed: u64,
    pub scenario: ScenarioSummary,
    pub tiers: Vec<TierReport>,
    pub z_tests: Vec<ZTestRow>,
    pub config: crate::pipeline::RunConfig,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Pretty JSON with a trailing newline.
pub fn report_to_string(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Parses and checks a report. A missing field is reported by name.
pub fn validate_report(text: &str) -> Result<Report> {
    let r: Report = serde_json::from_str(text).map_err(|e| Error::Schema {
        source_name: "report".into(),
        message: e.to_string(),
    })?;
    if r.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::Schema {
            source_name: "report".into(),
            message: format!("unsupported format_version {}", r.format_version),
        });
    }
    if r.tiers.is_empty() {
        return Err(Error::Schema {
            source_name: "report".into(),
            message: "tiers is empty".into(),
        });
    }
    Ok(r)
}

/// Writes to a sibling temporary file and renames it into place, so an
/// interrupted run never leaves a partial report.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("json.partial");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    write_atomic(path, &report_to_string(report)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_at_zero_budget() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let l = [1, 1, 0, 0];
        assert_eq!(tpr_at_fpr(&s, &l, 0.0).unwrap(), 1.0);
        assert_eq!(roc_auc(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn hand_enumerated_budget() {
        let s = [0.9, 0.8, 0.85, 0.2, 0.1];
        let l = [1, 1, 0, 0, 0];
        assert_eq!(tpr_at_fpr(&s, &l, 0.34).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr(&s, &l, 0.33).unwrap(), 0.5);
    }

    #[test]
    fn ties_enter_together() {
        let s = [0.5, 0.5];
        let l = [1, 0];
        assert_eq!(tpr_at_fpr(&s, &l, 0.5).unwrap(), 0.0);
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.5);
    }

    #[test]
    fn z_example_and_symmetry() {
        let z = two_proportion_z(0.5342, 0.3014, 73, 73).unwrap();
        assert!((z.z - 2.84).abs() <= 0.02, "{}", z.z);
        assert!(z.p_value < 0.01);
        assert_eq!(two_proportion_z(0.4, 0.4, 50, 50).unwrap().z, 0.0);
        assert!(two_proportion_z(0.0, 0.0, 10, 10).is_err());
    }

    #[test]
    fn accuracy_one_wrong() {
        let truth: Vec<LabeledMembership> = (0..4)
            .map(|i| LabeledMembership {
                record_id: format!("r{i}"),
                member_of: Some(i % 2),
            })
            .collect();
        let mut d: Vec<(String, Membership)> = truth.iter().map(|t| (t.record_id.clone(), Membership(t.member_of))).collect();
        assert_eq!(challenge_accuracy(&d, &truth).unwrap(), 1.0);
        d[2].1 = Membership::NON_MEMBER;
        assert_eq!(challenge_accuracy(&d, &truth).unwrap(), 0.75);
        d[0].0 = "zz".into();
        assert!(challenge_accuracy(&d, &truth).is_err());
    }
}
