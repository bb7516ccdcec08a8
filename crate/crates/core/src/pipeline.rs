//! End-to-end runs: scenario files, per-tier target training, the stacking
//! attack and baselines, metrics, FedAvg curves and the JSON report.
//!
//! Every stage seed derives from the master seed by a fixed offset:
//! scenario +1, targets +2, attack +3, folds +5, federated runs +6.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_for, AccountantQuery};
use crate::baselines::{lira_score, profile_heuristic, ExternalProfile, GaussianLossModel, Observation};
use crate::data::{
    generate_scenario, load_dataset, load_memberships_csv, load_prediction_matrix, renormalize, write_dataset_csv,
    write_memberships_csv, write_prediction_matrix, DataFormat, Dataset, LabeledMembership, Membership, Record,
    ScenarioBundle, ScenarioConfig,
};
use crate::error::{Error, Result, StageExt};
use crate::eval::{
    challenge_accuracy, emit_report, min_nonzero_fpr, oof_scores, roc_auc, roc_curve, tpr_at_fpr, two_proportion_z,
    write_roc_csv, AttackRow, FlSummary, FoldPlan, PrivacySummary, Report, ScenarioSummary, TargetSummary,
    TierReport, ZTestRow, REPORT_FORMAT_VERSION,
};
use crate::fl::{export_curves, run_federated, split_population, FlConfig};
use crate::stacking::{
    decide, fit_meta, run_attack, write_decisions_csv, AttackConfig, AttackDecision, AttackOutcome, ClientView,
    DecisionSource, PredictionOracle, RecordedPredictions, ScoreMatrix,
};
use crate::target::{predict_proba, train_for_tier, PredictionMatrix, PrivacyConfig, TrainConfig};
use crate::util::mix_seed;

pub const SEED_SCENARIO: u64 = 1;
pub const SEED_TARGETS: u64 = 2;
pub const SEED_ATTACK: u64 = 3;
pub const SEED_FOLDS: u64 = 5;
pub const SEED_FL: u64 = 6;

/// One privacy tier. `epsilon: null` means no DP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub name: String,
    pub epsilon: Option<f64>,
    pub delta: f64,
    #[serde(with = "crate::util::serde_float")]
    pub clip_norm: f64,
}

impl TierConfig {
    pub fn nodp() -> Self {
        TierConfig {
            name: "nodp".into(),
            epsilon: None,
            delta: PrivacyConfig::DEFAULT_DELTA,
            clip_norm: f64::INFINITY,
        }
    }

    pub fn dp(name: &str, epsilon: f64) -> Self {
        TierConfig {
            name: name.into(),
            epsilon: Some(epsilon),
            delta: PrivacyConfig::DEFAULT_DELTA,
            clip_norm: PrivacyConfig::DEFAULT_CLIP,
        }
    }

    pub fn defaults() -> Vec<TierConfig> {
        vec![Self::nodp(), Self::dp("lowdp", 200.0), Self::dp("highdp", 10.0)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\', '.']) {
            return Err(Error::config("tiers.name", format!("`{}` is not a usable tier name", self.name)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("tiers.epsilon", format!("tier {}: {e} must be positive", self.name)));
            }
            if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
                return Err(Error::config("tiers.clip_norm", format!("tier {}: must be finite and positive", self.name)));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("tiers.delta", format!("tier {}: must lie in (0,1)", self.name)));
        }
        Ok(())
    }

    /// Privacy parameters for `steps` noisy updates.
    pub fn privacy(&self, steps: usize) -> Result<PrivacyConfig> {
        match self.epsilon {
            None => Ok(PrivacyConfig::no_dp()),
            Some(e) => PrivacyConfig::for_epsilon(e, steps, self.delta, self.clip_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldSettings {
    pub k: usize,
    pub stratified: bool,
}

impl Default for FoldSettings {
    fn default() -> Self {
        FoldSettings { k: 5, stratified: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlSettings {
    pub rounds: usize,
    pub local_epochs: Vec<usize>,
    pub train_fraction: f64,
}

impl Default for FlSettings {
    fn default() -> Self {
        FlSettings {
            rounds: 50,
            local_epochs: vec![1, 5, 20],
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub tiers: Vec<TierConfig>,
    pub attack: AttackConfig,
    pub folds: FoldSettings,
    pub fl: FlSettings,
    /// Not written into reports, so the same run in two directories yields
    /// identical reports.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            tiers: TierConfig::defaults(),
            attack: AttackConfig::default(),
            folds: FoldSettings::default(),
            fl: FlSettings::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            source_name: "config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            source_name: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Sub-configs with their seeds replaced by master-seed derivations.
    pub fn seeded(&self) -> RunConfig {
        let mut c = self.clone();
        c.scenario.seed = mix_seed(self.seed, SEED_SCENARIO);
        c.train.seed = mix_seed(self.seed, SEED_TARGETS);
        c.attack.seed = mix_seed(self.seed, SEED_ATTACK);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.attack.rule.validate()?;
        if self.tiers.is_empty() {
            return Err(Error::config("tiers", "at least one tier is required"));
        }
        let mut names = HashSet::new();
        for t in &self.tiers {
            t.validate()?;
            if !names.insert(t.name.as_str()) {
                return Err(Error::config("tiers", format!("duplicate tier name {}", t.name)));
            }
        }
        if self.folds.k < 2 {
            return Err(Error::config("folds.k", "must be at least 2"));
        }
        if self.fl.rounds == 0 && !self.fl.local_epochs.is_empty() {
            return Err(Error::config("fl.rounds", "must be at least 1"));
        }
        if self.fl.local_epochs.contains(&0) {
            return Err(Error::config("fl.local_epochs", "entries must be at least 1"));
        }
        if !(self.fl.train_fraction > 0.0 && self.fl.train_fraction < 1.0) {
            return Err(Error::config("fl.train_fraction", "must lie in (0,1)"));
        }
        if self.scenario.clients < 3 {
            return Err(Error::config(
                "scenario.clients",
                "the attack needs a colluding client and at least two targets",
            ));
        }
        Ok(())
    }

    /// Keeps only the named tiers, in the order given.
    pub fn select_tiers(&mut self, names: &[String]) -> Result<()> {
        let mut picked = Vec::new();
        for n in names {
            let t = self
                .tiers
                .iter()
                .find(|t| &t.name == n)
                .ok_or_else(|| Error::config("tiers", format!("unknown tier `{n}`")))?;
            picked.push(t.clone());
        }
        self.tiers = picked;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// Shape of a pools directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub clients: usize,
    pub classes: usize,
    pub dim: usize,
    pub colluding_client: usize,
}

pub fn relevant_file(c: usize) -> String {
    format!("client{c}_relevant.csv")
}

pub fn external_file(c: usize) -> String {
    format!("client{c}_external.csv")
}

pub const CHALLENGE_FILE: &str = "challenge.csv";
pub const LEAKED_FILE: &str = "leaked_truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HIDDEN_DIR: &str = "hidden";

pub fn predictions_file(c: usize) -> String {
    format!("client{c}.csv")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the attacker-visible pools into `dir` and the hidden ground truth
/// (training sets and full membership) into `dir/hidden`.
pub fn write_scenario(bundle: &ScenarioBundle, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let hidden = dir.join(HIDDEN_DIR);
    create_dir(&hidden)?;
    let manifest = PoolManifest {
        clients: bundle.num_clients(),
        classes: bundle.config.classes,
        dim: bundle.config.dim,
        colluding_client: bundle.colluding_client,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    for (c, pools) in bundle.clients.iter().enumerate() {
        write_dataset_csv(&pools.relevant, None, &dir.join(relevant_file(c)))?;
        write_dataset_csv(&pools.external, None, &dir.join(external_file(c)))?;
        write_dataset_csv(&pools.train, None, &hidden.join(format!("client{c}_train.csv")))?;
    }
    write_dataset_csv(&bundle.challenge, None, &dir.join(CHALLENGE_FILE))?;
    write_memberships_csv(&bundle.leaked_truth(), &dir.join(LEAKED_FILE))?;
    write_memberships_csv(&bundle.ground_truth, &hidden.join("ground_truth.csv"))
}

/// The attacker's inputs as read back from a pools directory.
pub struct Pools {
    pub manifest: PoolManifest,
    pub relevant: Vec<Dataset>,
    pub external: Vec<Dataset>,
    pub challenge: Dataset,
    pub leaked: Vec<LabeledMembership>,
}

fn require_file(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Schema {
            source_name: path.display().to_string(),
            message: "required file is missing".into(),
        })
    }
}

pub fn load_pools(dir: &Path) -> Result<Pools> {
    let mpath = require_file(dir.join(MANIFEST_FILE))?;
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
        source_name: mpath.display().to_string(),
        message: e.to_string(),
    })?;
    let load = |name: String| -> Result<Dataset> {
        let p = require_file(dir.join(name))?;
        let d = load_dataset(&p, DataFormat::Csv, manifest.classes, None)?.dataset;
        if d.dim != manifest.dim {
            return Err(Error::Schema {
                source_name: p.display().to_string(),
                message: format!("{} features, manifest says {}", d.dim, manifest.dim),
            });
        }
        Ok(d)
    };
    let mut relevant = Vec::new();
    let mut external = Vec::new();
    for c in 0..manifest.clients {
        relevant.push(load(relevant_file(c))?);
        external.push(load(external_file(c))?);
    }
    let challenge = load(CHALLENGE_FILE.into())?;
    let leaked = load_memberships_csv(&require_file(dir.join(LEAKED_FILE))?, Some(manifest.clients))?;
    Ok(Pools {
        manifest,
        relevant,
        external,
        challenge,
        leaked,
    })
}

// ---------------------------------------------------------------------------
// Attack over recorded predictions
// ---------------------------------------------------------------------------

fn client_oracles(pools: &Pools, matrices: &[PredictionMatrix]) -> Result<Vec<RecordedPredictions>> {
    matrices
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let rec = RecordedPredictions::new(&[m]);
            let ids = pools.relevant[c]
                .records
                .iter()
                .chain(&pools.external[c].records)
                .chain(&pools.challenge.records)
                .map(|r| r.id.as_str());
            rec.check_covers(ids).stage(|| format!("predictions for client {c}"))?;
            Ok(rec)
        })
        .collect()
}

/// Stacking attack on pre-exported prediction files
/// (`predictions_dir/client{c}.csv`). No target is trained.
pub fn attack_external(pools_dir: &Path, predictions_dir: &Path, cfg: &AttackConfig) -> Result<(Pools, AttackOutcome)> {
    let pools = load_pools(pools_dir)?;
    let matrices: Vec<PredictionMatrix> = (0..pools.manifest.clients)
        .map(|c| load_prediction_matrix(&require_file(predictions_dir.join(predictions_file(c)))?))
        .collect::<Result<_>>()?;
    let oracles = client_oracles(&pools, &matrices)?;
    let outcome = attack_with(&pools, &oracles, cfg)?;
    Ok((pools, outcome))
}

fn attack_with(pools: &Pools, oracles: &[RecordedPredictions], cfg: &AttackConfig) -> Result<AttackOutcome> {
    let views: Vec<ClientView<'_>> = (0..pools.manifest.clients)
        .map(|c| ClientView {
            relevant: &pools.relevant[c],
            external: &pools.external[c],
            oracle: &oracles[c],
        })
        .collect();
    run_attack(&views, &pools.challenge, &pools.leaked, pools.manifest.colluding_client, cfg)
}

// ---------------------------------------------------------------------------
// Baselines over the same inputs
// ---------------------------------------------------------------------------

fn observe(oracle: &RecordedPredictions, r: &Record) -> Result<Observation> {
    Ok(Observation::from_probs(&oracle.query(r)?, r.task_label))
}

struct BaselineOutcome {
    decisions: Vec<AttackDecision>,
    /// Scores on the colluding client's labelled records, if the attack has a
    /// continuous score.
    labelled_scores: Option<Vec<f64>>,
}

fn leaked_decision(id: &str, colluding: usize) -> AttackDecision {
    AttackDecision {
        record_id: id.to_string(),
        scores: Vec::new(),
        assignment: Membership::client(colluding),
        column_ok: true,
        row_ok: true,
        source: DecisionSource::Leaked,
    }
}

/// Runs `decide_one` on the challenge records not already known to belong to
/// the colluding client, and assigns the known ones directly.
fn with_leaks(
    pools: &Pools,
    mut decide_one: impl FnMut(&Record) -> Result<AttackDecision>,
) -> Result<Vec<AttackDecision>> {
    let coll = pools.manifest.colluding_client;
    let known: HashSet<&str> = pools
        .leaked
        .iter()
        .filter(|m| m.member_of == Some(coll))
        .map(|m| m.record_id.as_str())
        .collect();
    pools
        .challenge
        .records
        .iter()
        .map(|r| {
            if known.contains(r.id.as_str()) {
                Ok(leaked_decision(&r.id, coll))
            } else {
                decide_one(r)
            }
        })
        .collect()
}

fn labelled_records(pools: &Pools) -> Vec<&Record> {
    let coll = pools.manifest.colluding_client;
    pools.relevant[coll]
        .records
        .iter()
        .chain(&pools.challenge.records)
        .chain(&pools.external[coll].records)
        .collect()
}

fn profile_baseline(pools: &Pools, oracles: &[RecordedPredictions], targets: &[usize]) -> Result<BaselineOutcome> {
    let profiles: Vec<ExternalProfile> = targets
        .iter()
        .map(|&c| {
            let obs: Vec<Observation> = pools.external[c]
                .records
                .iter()
                .map(|r| observe(&oracles[c], r))
                .collect::<Result<_>>()?;
            ExternalProfile::fit(&obs)
        })
        .collect::<Result<_>>()?;
    let decisions = with_leaks(pools, |r| {
        let obs: Vec<Observation> = targets.iter().map(|&c| observe(&oracles[c], r)).collect::<Result<_>>()?;
        let assignment = profile_heuristic(&profiles, &obs, targets)?;
        Ok(AttackDecision {
            record_id: r.id.clone(),
            scores: obs.iter().map(|o| o.confidence).collect(),
            assignment,
            column_ok: assignment.is_member(),
            row_ok: assignment.is_member(),
            source: DecisionSource::Rule,
        })
    })?;
    Ok(BaselineOutcome {
        decisions,
        labelled_scores: None,
    })
}

fn lira_baseline(pools: &Pools, oracles: &[RecordedPredictions], targets: &[usize], cfg: &AttackConfig) -> Result<BaselineOutcome> {
    let n = pools.manifest.clients;
    let models: Vec<GaussianLossModel> = (0..n)
        .map(|c| {
            let losses: Vec<f64> = pools.external[c]
                .records
                .iter()
                .map(|r| observe(&oracles[c], r).map(|o| o.loss))
                .collect::<Result<_>>()?;
            GaussianLossModel::fit(&losses)
        })
        .collect::<Result<_>>()?;
    let coll = pools.manifest.colluding_client;
    let known: HashSet<&str> = pools
        .leaked
        .iter()
        .filter(|m| m.member_of == Some(coll))
        .map(|m| m.record_id.as_str())
        .collect();
    let inference: Vec<&Record> = pools
        .challenge
        .records
        .iter()
        .filter(|r| !known.contains(r.id.as_str()))
        .collect();
    let matrix = ScoreMatrix {
        record_ids: inference.iter().map(|r| r.id.clone()).collect(),
        clients: targets.to_vec(),
        scores: inference
            .iter()
            .map(|r| {
                targets
                    .iter()
                    .map(|&c| observe(&oracles[c], r).map(|o| lira_score(&models[c], o.loss)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?,
    };
    let (rule_decisions, _) = decide(&matrix, &cfg.rule)?;
    let mut by_id: HashMap<String, AttackDecision> =
        rule_decisions.into_iter().map(|d| (d.record_id.clone(), d)).collect();
    let decisions = with_leaks(pools, |r| {
        by_id
            .remove(&r.id)
            .ok_or_else(|| Error::Join(format!("no LiRA decision for {}", r.id)))
    })?;
    let labelled_scores = labelled_records(pools)
        .iter()
        .map(|r| observe(&oracles[coll], r).map(|o| lira_score(&models[coll], o.loss)))
        .collect::<Result<_>>()?;
    Ok(BaselineOutcome {
        decisions,
        labelled_scores: Some(labelled_scores),
    })
}

/// Threshold per client is the mean loss over its relevant pool (the
/// attacker's stand-in for the training loss). A record goes to the
/// qualifying client with the lowest loss.
fn loss_baseline(pools: &Pools, oracles: &[RecordedPredictions], targets: &[usize]) -> Result<BaselineOutcome> {
    let taus: Vec<f64> = targets
        .iter()
        .map(|&c| {
            let l: Vec<f64> = pools.relevant[c]
                .records
                .iter()
                .map(|r| observe(&oracles[c], r).map(|o| o.loss))
                .collect::<Result<_>>()?;
            Ok(crate::util::mean(&l))
        })
        .collect::<Result<_>>()?;
    let decisions = with_leaks(pools, |r| {
        let losses: Vec<f64> = targets
            .iter()
            .map(|&c| observe(&oracles[c], r).map(|o| o.loss))
            .collect::<Result<_>>()?;
        let mut best: Option<usize> = None;
        for j in 0..targets.len() {
            if crate::baselines::loss_threshold(&[losses[j]], taus[j])[0] && best.is_none_or(|b| losses[j] < losses[b]) {
                best = Some(j);
            }
        }
        let assignment = best.map_or(Membership::NON_MEMBER, |j| Membership::client(targets[j]));
        Ok(AttackDecision {
            record_id: r.id.clone(),
            scores: losses,
            assignment,
            column_ok: assignment.is_member(),
            row_ok: assignment.is_member(),
            source: DecisionSource::Rule,
        })
    })?;
    let coll = pools.manifest.colluding_client;
    let labelled_scores = labelled_records(pools)
        .iter()
        .map(|r| observe(&oracles[coll], r).map(|o| -o.loss))
        .collect::<Result<_>>()?;
    Ok(BaselineOutcome {
        decisions,
        labelled_scores: Some(labelled_scores),
    })
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

pub const ATTACKS: [&str; 4] = ["stacking", "profile", "lira", "loss_threshold"];

/// Everything `run_all` computed, beside the files it wrote.
pub struct RunArtifacts {
    pub report: Report,
    pub bundle: ScenarioBundle,
}

fn assignments(decisions: &[AttackDecision]) -> Vec<(String, Membership)> {
    decisions.iter().map(|d| (d.record_id.clone(), d.assignment)).collect()
}

struct ScoredRow<'a> {
    name: &'a str,
    decisions: &'a [AttackDecision],
    labelled: Option<(&'a [f64], &'a [u8])>,
}

fn attack_row(row: ScoredRow<'_>, truth: &[LabeledMembership], tier_dir: &Path, tier: &str, clients: &[usize]) -> Result<AttackRow> {
    let acc = challenge_accuracy(&assignments(row.decisions), truth)?;
    let decisions_file = format!("{tier}/decisions_{}.csv", row.name);
    write_decisions_csv(row.decisions, clients, &tier_dir.join(format!("decisions_{}.csv", row.name)))?;
    let correct = (acc * truth.len() as f64).round() as usize;
    let (mut t1, mut t3, mut auc, mut minf, mut roc_file) = (None, None, None, None, None);
    if let Some((scores, labels)) = row.labelled {
        let pts = roc_curve(scores, labels)?;
        write_roc_csv(&pts, &tier_dir.join(format!("roc_{}.csv", row.name)))?;
        roc_file = Some(format!("{tier}/roc_{}.csv", row.name));
        t1 = Some(tpr_at_fpr(scores, labels, 0.01)?);
        t3 = Some(tpr_at_fpr(scores, labels, 0.03)?);
        auc = Some(roc_auc(scores, labels)?);
        minf = min_nonzero_fpr(&pts);
    }
    Ok(AttackRow {
        attack: row.name.to_string(),
        challenge_accuracy: acc,
        correct,
        total: truth.len(),
        tpr_at_1pct_fpr: t1,
        tpr_at_3pct_fpr: t3,
        auc,
        min_nonzero_fpr: minf,
        roc_file,
        decisions_file,
    })
}

/// Records every client trains on, the pool records that are not aliases of
/// training records, and all external records: each distinct sample once.
pub fn fl_population(bundle: &ScenarioBundle) -> Dataset {
    let mut records: Vec<Record> = Vec::new();
    for pools in &bundle.clients {
        records.extend(pools.train.records.iter().cloned());
        records.extend(pools.external.records.iter().cloned());
        records.extend(
            pools
                .relevant
                .records
                .iter()
                .filter(|r| !bundle.aliases.contains_key(&r.id))
                .cloned(),
        );
    }
    records.extend(
        bundle
            .challenge
            .records
            .iter()
            .filter(|r| !bundle.aliases.contains_key(&r.id))
            .cloned(),
    );
    Dataset {
        dim: bundle.config.dim,
        classes: bundle.config.classes,
        records,
    }
}

/// Noise for a federated run: each client's local DP-SGD is accounted over
/// all `rounds · local_epochs · batches` steps it performs.
pub fn fl_privacy(tier: &TierConfig, train: &TrainConfig, clients: &[Dataset], rounds: usize, local_epochs: usize) -> Result<PrivacyConfig> {
    let batches = clients.iter().map(|d| train.batches_per_epoch(d.len())).max().unwrap_or(1);
    tier.privacy(rounds * local_epochs * batches)
}

struct TierRun {
    report: TierReport,
}

fn run_tier(cfg: &RunConfig, bundle: &ScenarioBundle, pools: &Pools, tier: &TierConfig, out: &Path) -> Result<TierRun> {
    let tier_dir = out.join(&tier.name);
    let pred_dir = tier_dir.join("predictions");
    create_dir(&pred_dir)?;
    let n_clients = bundle.num_clients();
    let coll = bundle.colluding_client;

    // targets
    let steps = bundle
        .clients
        .iter()
        .map(|p| cfg.train.planned_steps(p.train.len()))
        .max()
        .unwrap_or(0);
    let privacy = tier.privacy(steps).stage(|| format!("{}: privacy calibration", tier.name))?;
    let trained: Vec<crate::target::TrainedTarget> = bundle
        .clients
        .par_iter()
        .enumerate()
        .map(|(c, p)| {
            let tc = TrainConfig {
                seed: mix_seed(cfg.train.seed, c as u64),
                ..cfg.train.clone()
            };
            train_for_tier(&p.train, &tc, &privacy).stage(|| format!("{}: target training (client {c})", tier.name))
        })
        .collect::<Result<_>>()?;

    // black-box answers, exported and re-read through the same normalisation
    let matrices: Vec<PredictionMatrix> = trained
        .iter()
        .enumerate()
        .map(|(c, t)| {
            let records: Vec<Record> = pools.relevant[c]
                .records
                .iter()
                .chain(&pools.external[c].records)
                .chain(&pools.challenge.records)
                .cloned()
                .collect();
            let mut m = predict_proba(&t.model, &records)?;
            m.probs.iter_mut().for_each(|p| renormalize(p));
            write_prediction_matrix(&m, &pred_dir.join(predictions_file(c)))?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let oracles = client_oracles(pools, &matrices)?;

    // stacking
    let outcome = attack_with(pools, &oracles, &cfg.attack).stage(|| format!("{}: stacking attack", tier.name))?;
    let prov_path = tier_dir.join("provenance.json");
    std::fs::write(&prov_path, serde_json::to_string_pretty(&outcome.provenance)? + "\n")
        .map_err(|e| Error::io(&prov_path, e))?;
    let plan = FoldPlan::new(
        &outcome.colluding_meta.y,
        cfg.folds.k,
        cfg.folds.stratified,
        mix_seed(cfg.seed, SEED_FOLDS),
    )?;
    let meta_params = cfg.attack.meta.clone();
    let meta_seed = outcome.provenance.meta_seed;
    let oof = oof_scores(&outcome.colluding_meta.x, &outcome.colluding_meta.y, &plan, |tx, ty, ex| {
        let m = fit_meta(tx, ty, &meta_params, meta_seed)?;
        Ok(ex.iter().map(|r| m.predict_row(r)).collect())
    })
    .stage(|| format!("{}: out-of-fold scoring", tier.name))?;

    // baselines
    let targets: Vec<usize> = (0..n_clients).filter(|&c| c != coll).collect();
    let profile = profile_baseline(pools, &oracles, &targets).stage(|| format!("{}: profile baseline", tier.name))?;
    let lira = lira_baseline(pools, &oracles, &targets, &cfg.attack).stage(|| format!("{}: LiRA baseline", tier.name))?;
    let loss = loss_baseline(pools, &oracles, &targets).stage(|| format!("{}: loss baseline", tier.name))?;

    // the labelled set in the same order as the meta-dataset
    let labelled_ids: Vec<String> = labelled_records(pools).iter().map(|r| r.id.clone()).collect();
    if labelled_ids != outcome.colluding_meta.record_ids {
        return Err(Error::Join("labelled set order differs from the meta-dataset".into()));
    }
    let labels = &outcome.colluding_meta.y;

    let truth = bundle.challenge_truth();
    let rows = vec![
        attack_row(
            ScoredRow {
                name: ATTACKS[0],
                decisions: &outcome.decisions,
                labelled: Some((&oof, labels)),
            },
            &truth,
            &tier_dir,
            &tier.name,
            &targets,
        )?,
        attack_row(
            ScoredRow {
                name: ATTACKS[1],
                decisions: &profile.decisions,
                labelled: None,
            },
            &truth,
            &tier_dir,
            &tier.name,
            &targets,
        )?,
        attack_row(
            ScoredRow {
                name: ATTACKS[2],
                decisions: &lira.decisions,
                labelled: lira.labelled_scores.as_deref().map(|s| (s, labels.as_slice())),
            },
            &truth,
            &tier_dir,
            &tier.name,
            &targets,
        )?,
        attack_row(
            ScoredRow {
                name: ATTACKS[3],
                decisions: &loss.decisions,
                labelled: loss.labelled_scores.as_deref().map(|s| (s, labels.as_slice())),
            },
            &truth,
            &tier_dir,
            &tier.name,
            &targets,
        )?,
    ];
    let floor = bundle.random_floor();
    let z_vs_floor = two_proportion_z(rows[0].challenge_accuracy, floor, truth.len(), truth.len())?;

    let target_summaries = trained
        .iter()
        .enumerate()
        .map(|(c, t)| TargetSummary {
            client: c,
            train_accuracy: t.model.accuracy(&bundle.clients[c].train),
            member_loss: t.model.mean_loss(&bundle.clients[c].train),
            external_loss: t.model.mean_loss(&bundle.clients[c].external),
        })
        .collect();

    // federated curves
    let population = fl_population(bundle);
    let fl_seed = mix_seed(cfg.seed, SEED_FL);
    let (parts, holdout) = split_population(&population, n_clients, cfg.fl.train_fraction, fl_seed)?;
    let fl = cfg
        .fl
        .local_epochs
        .iter()
        .map(|&e| {
            let tier_privacy = fl_privacy(tier, &cfg.train, &parts, cfg.fl.rounds, e)?;
            let fc = FlConfig {
                rounds: cfg.fl.rounds,
                local_epochs: e,
                tier: tier_privacy.clone(),
                train_fraction: cfg.fl.train_fraction,
                seed: fl_seed,
            };
            let logs = run_federated(&parts, &holdout, &cfg.train, &fc)
                .stage(|| format!("{}: federated run E={e}", tier.name))?;
            let file = format!("fl_E{e}.csv");
            export_curves(&logs, &tier.name, bundle.config.classes, &tier_dir.join(&file))?;
            Ok(FlSummary {
                local_epochs: e,
                rounds: cfg.fl.rounds,
                noise_multiplier: tier_privacy.noise_multiplier,
                final_accuracy: logs.last().unwrap().accuracy,
                best_accuracy: logs.iter().map(|l| l.accuracy).fold(0.0, f64::max),
                curve_file: format!("{}/{file}", tier.name),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let epsilon_spent = if privacy.is_private() {
        Some(epsilon_for(&AccountantQuery {
            sigma: privacy.noise_multiplier,
            steps: privacy.steps,
            delta: privacy.delta,
        })?)
    } else {
        None
    };
    Ok(TierRun {
        report: TierReport {
            tier: tier.name.clone(),
            privacy: PrivacySummary {
                target_epsilon: tier.epsilon,
                delta: tier.delta,
                clip_norm: privacy.clip_norm,
                noise_multiplier: privacy.noise_multiplier,
                steps,
                epsilon_spent,
            },
            targets: target_summaries,
            attacks: rows,
            z_vs_floor,
            provenance: outcome.provenance,
            fl,
        },
    })
}

/// Runs every configured tier and writes the report to
/// `output_dir/report.json`.
pub fn run_all(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let cfg = config.seeded();
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    let bundle = generate_scenario(&cfg.scenario).stage(|| "scenario".into())?;
    let pools_dir = out.join("pools");
    write_scenario(&bundle, &pools_dir)?;
    let pools = load_pools(&pools_dir)?;

    let mut tiers = Vec::new();
    for tier in &cfg.tiers {
        tiers.push(run_tier(&cfg, &bundle, &pools, tier, &out)?.report);
    }
    let mut z_tests = Vec::new();
    for t in &tiers {
        let stacking = &t.attacks[0];
        let profile = &t.attacks[1];
        z_tests.push(ZTestRow {
            label: format!("{}: stacking vs profile", t.tier),
            p1: stacking.challenge_accuracy,
            p2: profile.challenge_accuracy,
            n1: stacking.total,
            n2: profile.total,
            result: two_proportion_z(stacking.challenge_accuracy, profile.challenge_accuracy, stacking.total, profile.total)
                .ok(),
        });
    }
    let scenario = ScenarioSummary {
        clients: bundle.num_clients(),
        classes: bundle.config.classes,
        dim: bundle.config.dim,
        colluding_client: bundle.colluding_client,
        relevant_sizes: bundle.clients.iter().map(|c| c.relevant.len()).collect(),
        external_sizes: bundle.clients.iter().map(|c| c.external.len()).collect(),
        challenge_size: bundle.challenge.len(),
        random_floor: bundle.random_floor(),
        meta_labelled: tiers[0].provenance.meta_rows,
        meta_members: tiers[0].provenance.meta_members,
    };
    let report = Report {
        format_version: REPORT_FORMAT_VERSION,
        master_seed: config.seed,
        scenario,
        tiers,
        z_tests,
        config: config.clone(),
    };
    emit_report(&report, &out.join("report.json"))?;
    Ok(RunArtifacts { report, bundle })
}

/// Per-tier attack accuracies keyed by tier then attack name.
pub fn accuracy_table(report: &Report) -> BTreeMap<String, BTreeMap<String, f64>> {
    report
        .tiers
        .iter()
        .map(|t| {
            (
                t.tier.clone(),
                t.attacks
                    .iter()
                    .map(|a| (a.attack.clone(), a.challenge_accuracy))
                    .collect(),
            )
        })
        .collect()
}
