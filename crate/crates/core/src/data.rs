//! Records, datasets and the synthetic federated scenario.
//!
//! A scenario has `C` clients, each holding a private training set (the ground
//! truth the attacker never sees), a *relevant* pool that mixes members and
//! non-members of that client, and an *external* pool of guaranteed
//! non-members. A single *challenge* pool is shared by all clients.
//!
//! Pool records carry neutral ids (`rel{c}_{j}`, `ext{c}_{j}`, `chal_{j}`) so
//! that the files handed to an attacker do not reveal membership; the mapping
//! back to training ids is kept in [`ScenarioBundle::aliases`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::PredictionMatrix;
use crate::util::{fmt_f64, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: Vec<f64>,
    pub task_label: usize,
}

/// Membership label of one record. `None` means non-member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Membership(pub Option<usize>);

impl Membership {
    pub const NON_MEMBER: Membership = Membership(None);

    pub fn client(c: usize) -> Self {
        Membership(Some(c))
    }

    pub fn is_member(&self) -> bool {
        self.0.is_some()
    }
}

impl std::fmt::Display for Membership {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(c) => write!(f, "{c}"),
            None => write!(f, "non-member"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMembership {
    pub record_id: String,
    pub member_of: Option<usize>,
}

/// An ordered collection of records sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: r.features.len(),
                });
            }
            if r.task_label >= classes {
                return Err(Error::config(
                    "task_label",
                    format!("record {} has label {} >= {}", r.id, r.task_label, classes),
                ));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::config("record_id", format!("duplicate id {}", r.id)));
            }
        }
        Ok(Dataset {
            dim,
            classes,
            records,
        })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Dataset {
            dim,
            classes,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.task_label).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Subset by position, preserving the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            classes: self.classes,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub clients: usize,
    pub classes: usize,
    pub dim: usize,
    pub train_sizes: Vec<usize>,
    pub relevant_sizes: Vec<usize>,
    pub external_sizes: Vec<usize>,
    pub relevant_member_fractions: Vec<f64>,
    pub challenge_size: usize,
    /// Members of each client placed in the challenge pool; the rest of the
    /// pool is global non-members.
    pub challenge_members: Vec<usize>,
    pub class_separation: f64,
    /// Defaults to the last client.
    pub colluding_client: Option<usize>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            clients: 4,
            classes: 4,
            dim: 256,
            train_sizes: vec![40; 4],
            relevant_sizes: vec![73, 95, 59, 23],
            external_sizes: vec![64, 83, 52, 20],
            relevant_member_fractions: vec![0.2, 0.2, 0.2, 13.0 / 23.0],
            challenge_size: 73,
            challenge_members: vec![18, 18, 18, 0],
            class_separation: 4.0,
            colluding_client: None,
            seed: 0,
        }
    }
}

/// `round(fraction * size)` with halves rounded away from zero.
pub fn member_count(fraction: f64, size: usize) -> usize {
    (fraction * size as f64).round() as usize
}

impl ScenarioConfig {
    pub fn colluding(&self) -> usize {
        self.colluding_client.unwrap_or(self.clients.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.clients;
        if c < 1 {
            return Err(Error::config("clients", "must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "must be >= 2"));
        }
        if self.dim < 1 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        for (name, len) in [
            ("train_sizes", self.train_sizes.len()),
            ("relevant_sizes", self.relevant_sizes.len()),
            ("external_sizes", self.external_sizes.len()),
            ("relevant_member_fractions", self.relevant_member_fractions.len()),
            ("challenge_members", self.challenge_members.len()),
        ] {
            if len != c {
                return Err(Error::config(name, format!("expected {c} entries, got {len}")));
            }
        }
        for (name, sizes) in [
            ("train_sizes", &self.train_sizes),
            ("relevant_sizes", &self.relevant_sizes),
            ("external_sizes", &self.external_sizes),
        ] {
            if let Some(i) = sizes.iter().position(|&s| s < 1) {
                return Err(Error::config(name, format!("client {i}: size must be >= 1")));
            }
        }
        if self.challenge_size < 1 {
            return Err(Error::config("challenge_size", "must be >= 1"));
        }
        let total_challenge_members: usize = self.challenge_members.iter().sum();
        if total_challenge_members > self.challenge_size {
            return Err(Error::config(
                "challenge_members",
                format!(
                    "{total_challenge_members} members exceed challenge size {}",
                    self.challenge_size
                ),
            ));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return Err(Error::config("class_separation", "must be finite and >= 0"));
        }
        if self.colluding() >= c {
            return Err(Error::config("colluding_client", "must be < clients"));
        }
        for i in 0..c {
            let f = self.relevant_member_fractions[i];
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config(
                    "relevant_member_fractions",
                    format!("client {i}: {f} not in [0,1]"),
                ));
            }
            let needed = member_count(f, self.relevant_sizes[i]) + self.challenge_members[i];
            if needed > self.train_sizes[i] {
                return Err(Error::config(
                    "relevant_member_fractions",
                    format!(
                        "client {i}: needs {needed} distinct members but train size is {}",
                        self.train_sizes[i]
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPools {
    /// Hidden ground truth: the records this client trains on.
    pub train: Dataset,
    pub relevant: Dataset,
    pub external: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub config: ScenarioConfig,
    pub clients: Vec<ClientPools>,
    pub challenge: Dataset,
    /// Membership of every relevant and challenge record, keyed by pool id.
    pub ground_truth: Vec<LabeledMembership>,
    /// Pool id -> training id, for pool records that are members.
    pub aliases: BTreeMap<String, String>,
    pub colluding_client: usize,
}

impl ScenarioBundle {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn truth_map(&self) -> HashMap<&str, Option<usize>> {
        self.ground_truth
            .iter()
            .map(|m| (m.record_id.as_str(), m.member_of))
            .collect()
    }

    pub fn challenge_truth(&self) -> Vec<LabeledMembership> {
        let truth = self.truth_map();
        self.challenge
            .records
            .iter()
            .map(|r| LabeledMembership {
                record_id: r.id.clone(),
                member_of: truth[r.id.as_str()],
            })
            .collect()
    }

    /// What the colluding client reveals: for its relevant pool and for the
    /// challenge pool, whether each record is one of its members.
    /// `member_of` is `Some(colluding)` or `None`.
    pub fn leaked_truth(&self) -> Vec<LabeledMembership> {
        let coll = self.colluding_client;
        let truth = self.truth_map();
        self.clients[coll]
            .relevant
            .records
            .iter()
            .chain(self.challenge.records.iter())
            .map(|r| LabeledMembership {
                record_id: r.id.clone(),
                member_of: truth[r.id.as_str()].filter(|&c| c == coll),
            })
            .collect()
    }

    /// Expected challenge accuracy of an attacker that assigns the colluding
    /// client's members from leaked truth and guesses uniformly among the
    /// non-colluding clients and "non-member" for every other record.
    pub fn random_floor(&self) -> f64 {
        random_floor(&self.challenge_truth(), self.colluding_client, self.num_clients())
    }
}

pub fn random_floor(truth: &[LabeledMembership], colluding: usize, clients: usize) -> f64 {
    let n = truth.len() as f64;
    let leaked = truth
        .iter()
        .filter(|m| m.member_of == Some(colluding))
        .count() as f64;
    // (clients - 1) non-colluding clients plus the non-member label
    let labels = clients as f64;
    (leaked + (n - leaked) / labels) / n
}

struct Sampler {
    means: Vec<Vec<f64>>,
    dim: usize,
    classes: usize,
}

impl Sampler {
    fn new(cfg: &ScenarioConfig, rng: &mut Rng) -> Self {
        let scale = cfg.class_separation / (cfg.dim as f64).sqrt();
        let means = (0..cfg.classes)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Sampler {
            means,
            dim: cfg.dim,
            classes: cfg.classes,
        }
    }

    fn draw(&self, id: String, rng: &mut Rng) -> Record {
        let label = rng.random_range(0..self.classes);
        let features = (0..self.dim)
            .map(|j| self.means[label][j] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        Record {
            id,
            features,
            task_label: label,
        }
    }
}

/// Draws a scenario from `K` Gaussian class clusters with identity covariance.
/// Class means are random directions of norm about `class_separation`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioBundle> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let sampler = Sampler::new(cfg, &mut rng);
    let c_count = cfg.clients;

    let mut truth: Vec<LabeledMembership> = Vec::new();
    let mut aliases = BTreeMap::new();
    let mut clients = Vec::with_capacity(c_count);
    let mut challenge_members: Vec<(Record, usize)> = Vec::new();

    for c in 0..c_count {
        let train: Vec<Record> = (0..cfg.train_sizes[c])
            .map(|i| sampler.draw(format!("c{c}_{i}"), &mut rng))
            .collect();

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let n_rel_members = member_count(cfg.relevant_member_fractions[c], cfg.relevant_sizes[c]);
        let (rel_idx, rest) = order.split_at(n_rel_members);
        let chal_idx = &rest[..cfg.challenge_members[c]];

        let mut relevant: Vec<(Record, Option<usize>)> = rel_idx
            .iter()
            .map(|&i| (train[i].clone(), Some(c)))
            .collect();
        for _ in n_rel_members..cfg.relevant_sizes[c] {
            relevant.push((sampler.draw(String::new(), &mut rng), None));
        }
        relevant.shuffle(&mut rng);
        let relevant: Vec<Record> = relevant
            .into_iter()
            .enumerate()
            .map(|(j, (mut r, m))| {
                let pool_id = format!("rel{c}_{j}");
                if m.is_some() {
                    aliases.insert(pool_id.clone(), r.id.clone());
                }
                truth.push(LabeledMembership {
                    record_id: pool_id.clone(),
                    member_of: m,
                });
                r.id = pool_id;
                r
            })
            .collect();

        for &i in chal_idx {
            challenge_members.push((train[i].clone(), c));
        }

        let external: Vec<Record> = (0..cfg.external_sizes[c])
            .map(|j| sampler.draw(format!("ext{c}_{j}"), &mut rng))
            .collect();

        clients.push(ClientPools {
            train: Dataset::new(cfg.dim, cfg.classes, train)?,
            relevant: Dataset::new(cfg.dim, cfg.classes, relevant)?,
            external: Dataset::new(cfg.dim, cfg.classes, external)?,
        });
    }

    let mut challenge: Vec<(Record, Option<usize>)> = challenge_members
        .into_iter()
        .map(|(r, c)| (r, Some(c)))
        .collect();
    while challenge.len() < cfg.challenge_size {
        challenge.push((sampler.draw(String::new(), &mut rng), None));
    }
    challenge.shuffle(&mut rng);
    let challenge: Vec<Record> = challenge
        .into_iter()
        .enumerate()
        .map(|(j, (mut r, m))| {
            let pool_id = format!("chal_{j}");
            if m.is_some() {
                aliases.insert(pool_id.clone(), r.id.clone());
            }
            truth.push(LabeledMembership {
                record_id: pool_id.clone(),
                member_of: m,
            });
            r.id = pool_id;
            r
        })
        .collect();

    Ok(ScenarioBundle {
        config: cfg.clone(),
        clients,
        challenge: Dataset::new(cfg.dim, cfg.classes, challenge)?,
        ground_truth: truth,
        aliases,
        colluding_client: cfg.colluding(),
    })
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

fn parse_member(cell: &str, clients: Option<usize>) -> std::result::Result<Option<usize>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let c: usize = cell
        .parse()
        .map_err(|_| format!("member_of `{cell}` is not a client index"))?;
    if let Some(n) = clients {
        if c >= n {
            return Err(format!("member_of {c} out of range (clients = {n})"));
        }
    }
    Ok(Some(c))
}

/// Writes a dataset in the CSV schema, optionally with a `member_of` column.
pub fn write_dataset_csv(
    dataset: &Dataset,
    membership: Option<&HashMap<&str, Option<usize>>>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["record_id".to_string()];
    header.extend((0..dataset.dim).map(|j| format!("f{j}")));
    header.push("task_label".into());
    if membership.is_some() {
        header.push("member_of".into());
    }
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for r in &dataset.records {
        let mut line = r.id.clone();
        for &x in &r.features {
            line.push(',');
            line.push_str(&fmt_f64(x));
        }
        line.push(',');
        line.push_str(&r.task_label.to_string());
        if let Some(m) = membership {
            line.push(',');
            if let Some(Some(c)) = m.get(r.id.as_str()) {
                line.push_str(&c.to_string());
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// JSON mirror of the CSV schema: an array of flat objects.
pub fn write_dataset_json(
    dataset: &Dataset,
    membership: Option<&HashMap<&str, Option<usize>>>,
    path: &Path,
) -> Result<()> {
    let rows: Vec<serde_json::Value> = dataset
        .records
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            obj.insert("record_id".into(), r.id.clone().into());
            for (j, &x) in r.features.iter().enumerate() {
                obj.insert(format!("f{j}"), x.into());
            }
            obj.insert("task_label".into(), r.task_label.into());
            if let Some(m) = membership {
                let v = match m.get(r.id.as_str()) {
                    Some(Some(c)) => serde_json::Value::from(*c),
                    _ => serde_json::Value::Null,
                };
                obj.insert("member_of".into(), v);
            }
            serde_json::Value::Object(obj)
        })
        .collect();
    let text = serde_json::to_string_pretty(&rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub memberships: Option<Vec<LabeledMembership>>,
}

/// Loads a dataset file. `classes` bounds the task labels; `clients`, when
/// given, bounds `member_of`.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    classes: usize,
    clients: Option<usize>,
) -> Result<LoadedDataset> {
    match format {
        DataFormat::Csv => load_dataset_csv(path, classes, clients),
        DataFormat::Json => load_dataset_json(path, classes, clients),
    }
}

fn load_dataset_csv(path: &Path, classes: usize, clients: Option<usize>) -> Result<LoadedDataset> {
    let name = source_name(path);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Schema {
            source_name: name.clone(),
            message: e.to_string(),
        })?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema {
            source_name: name.clone(),
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let schema = |m: String| Error::Schema {
        source_name: name.clone(),
        message: m,
    };
    if cols.first() != Some(&"record_id") {
        return Err(schema("first column must be `record_id`".into()));
    }
    let label_col = cols
        .iter()
        .position(|&c| c == "task_label")
        .ok_or_else(|| schema("missing column `task_label`".into()))?;
    let dim = label_col - 1;
    for (j, col) in cols[1..label_col].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(schema(format!("expected column `f{j}`, found `{col}`")));
        }
    }
    let has_member = match cols.len() - label_col - 1 {
        0 => false,
        1 if cols[label_col + 1] == "member_of" => true,
        _ => {
            return Err(schema(format!(
                "unexpected trailing columns after `task_label`: {:?}",
                &cols[label_col + 1..]
            )))
        }
    };

    let mut records = Vec::new();
    let mut members = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row_err = |m: String| Error::Row {
            source_name: name.clone(),
            row: line,
            message: m,
        };
        let row = row.map_err(|e| row_err(e.to_string()))?;
        if row.len() != cols.len() {
            return Err(row_err(format!("expected {} cells, got {}", cols.len(), row.len())));
        }
        let id = row[0].to_string();
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let cell = row[j + 1].trim();
            let x: f64 = cell
                .parse()
                .map_err(|_| row_err(format!("column f{j}: `{cell}` is not a number")))?;
            features.push(x);
        }
        let label_cell = row[label_col].trim();
        let task_label: usize = label_cell
            .parse()
            .map_err(|_| row_err(format!("task_label `{label_cell}` is not a class index")))?;
        if task_label >= classes {
            return Err(row_err(format!(
                "task_label {task_label} out of range (classes = {classes})"
            )));
        }
        if has_member {
            let m = parse_member(&row[label_col + 1], clients).map_err(row_err)?;
            members.push(LabeledMembership {
                record_id: id.clone(),
                member_of: m,
            });
        }
        records.push(Record {
            id,
            features,
            task_label,
        });
    }
    Ok(LoadedDataset {
        dataset: Dataset::new(dim, classes, records).map_err(|e| schema(e.to_string()))?,
        memberships: has_member.then_some(members),
    })
}

fn load_dataset_json(path: &Path, classes: usize, clients: Option<usize>) -> Result<LoadedDataset> {
    let name = source_name(path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let schema = |m: String| Error::Schema {
        source_name: name.clone(),
        message: m,
    };
    let rows = value
        .as_array()
        .ok_or_else(|| schema("top level must be an array".into()))?;
    let mut dim = None;
    let mut records = Vec::new();
    let mut members = Vec::new();
    let mut has_member = None;
    for (i, row) in rows.iter().enumerate() {
        let row_err = |m: String| Error::Row {
            source_name: name.clone(),
            row: i,
            message: m,
        };
        let obj = row
            .as_object()
            .ok_or_else(|| row_err("not an object".into()))?;
        let id = obj
            .get("record_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| row_err("missing string `record_id`".into()))?
            .to_string();
        let label = obj
            .get("task_label")
            .ok_or_else(|| schema("missing column `task_label`".into()))?
            .as_u64()
            .ok_or_else(|| row_err("task_label is not a class index".into()))?
            as usize;
        if label >= classes {
            return Err(row_err(format!(
                "task_label {label} out of range (classes = {classes})"
            )));
        }
        let d = obj.keys().filter(|k| k.starts_with('f')).count();
        if *dim.get_or_insert(d) != d {
            return Err(row_err(format!("expected {} features, got {d}", dim.unwrap())));
        }
        let mut features = Vec::with_capacity(d);
        for j in 0..d {
            let x = obj
                .get(&format!("f{j}"))
                .ok_or_else(|| row_err(format!("missing feature f{j}")))?
                .as_f64()
                .ok_or_else(|| row_err(format!("feature f{j} is not a number")))?;
            features.push(x);
        }
        let m = obj.get("member_of");
        if *has_member.get_or_insert(m.is_some()) != m.is_some() {
            return Err(row_err("member_of present on some rows only".into()));
        }
        if let Some(m) = m {
            let member_of = match m {
                serde_json::Value::Null => None,
                v => {
                    let c = v
                        .as_u64()
                        .ok_or_else(|| row_err("member_of is not a client index".into()))?
                        as usize;
                    if clients.is_some_and(|n| c >= n) {
                        return Err(row_err(format!("member_of {c} out of range")));
                    }
                    Some(c)
                }
            };
            members.push(LabeledMembership {
                record_id: id.clone(),
                member_of,
            });
        }
        records.push(Record {
            id,
            features,
            task_label: label,
        });
    }
    Ok(LoadedDataset {
        dataset: Dataset::new(dim.unwrap_or(0), classes, records)
            .map_err(|e| schema(e.to_string()))?,
        memberships: has_member.unwrap_or(false).then_some(members),
    })
}

pub fn write_memberships_csv(truth: &[LabeledMembership], path: &Path) -> Result<()> {
    let mut out = String::from("record_id,member_of\n");
    for m in truth {
        out.push_str(&m.record_id);
        out.push(',');
        if let Some(c) = m.member_of {
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_memberships_csv(path: &Path, clients: Option<usize>) -> Result<Vec<LabeledMembership>> {
    let name = source_name(path);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        source_name: name.clone(),
        message: e.to_string(),
    })?;
    let header = rdr.headers().map_err(|e| Error::Schema {
        source_name: name.clone(),
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["record_id", "member_of"] {
        return Err(Error::Schema {
            source_name: name,
            message: "header must be `record_id,member_of`".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_err = |m: String| Error::Row {
            source_name: name.clone(),
            row: i + 2,
            message: m,
        };
        let row = row.map_err(|e| row_err(e.to_string()))?;
        out.push(LabeledMembership {
            record_id: row[0].to_string(),
            member_of: parse_member(&row[1], clients).map_err(row_err)?,
        });
    }
    Ok(out)
}

/// Tolerance on the row sum of a prediction file.
pub const PREDICTION_SUM_TOLERANCE: f64 = 1e-3;

/// Divides a probability row by its sum unless the sum is exactly 1.
pub fn renormalize(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    if sum != 1.0 {
        p.iter_mut().for_each(|x| *x /= sum);
    }
}

/// Loads `record_id,p0,...,p{K-1}`. Rows within 1e-3 of unit sum are
/// renormalized; anything else is rejected.
pub fn load_prediction_matrix(path: &Path) -> Result<PredictionMatrix> {
    let name = source_name(path);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        source_name: name.clone(),
        message: e.to_string(),
    })?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema {
            source_name: name.clone(),
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&"record_id") || cols.len() < 2 {
        return Err(Error::Schema {
            source_name: name,
            message: "header must be `record_id,p0,...`".into(),
        });
    }
    for (k, col) in cols[1..].iter().enumerate() {
        if *col != format!("p{k}") {
            return Err(Error::Schema {
                source_name: name,
                message: format!("expected column `p{k}`, found `{col}`"),
            });
        }
    }
    let k = cols.len() - 1;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_err = |m: String| Error::Row {
            source_name: name.clone(),
            row: i + 2,
            message: m,
        };
        let row = row.map_err(|e| row_err(e.to_string()))?;
        if row.len() != k + 1 {
            return Err(row_err(format!("expected {} cells, got {}", k + 1, row.len())));
        }
        let mut p = Vec::with_capacity(k);
        for j in 0..k {
            let cell = row[j + 1].trim();
            let x: f64 = cell
                .parse()
                .map_err(|_| row_err(format!("p{j}: `{cell}` is not a number")))?;
            if !x.is_finite() || x < 0.0 {
                return Err(row_err(format!("p{j} = {x} is not a probability")));
            }
            p.push(x);
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PREDICTION_SUM_TOLERANCE {
            return Err(row_err(format!("probabilities sum to {sum}, not 1")));
        }
        renormalize(&mut p);
        ids.push(row[0].to_string());
        probs.push(p);
    }
    PredictionMatrix::new(ids, probs)
}

pub fn write_prediction_matrix(preds: &PredictionMatrix, path: &Path) -> Result<()> {
    let k = preds.classes();
    let mut out = String::from("record_id");
    for j in 0..k {
        out.push_str(&format!(",p{j}"));
    }
    out.push('\n');
    for (id, row) in preds.record_ids.iter().zip(&preds.probs) {
        out.push_str(id);
        for &p in row {
            out.push(',');
            out.push_str(&fmt_f64(p));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            dim: 8,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn default_pool_sizes_follow_table() {
        let b = generate_scenario(&small_cfg()).unwrap();
        let sizes: Vec<(usize, usize)> = b
            .clients
            .iter()
            .map(|c| (c.relevant.len(), c.external.len()))
            .collect();
        assert_eq!(sizes, vec![(73, 64), (95, 83), (59, 52), (23, 20)]);
        assert_eq!(b.challenge.len(), 73);
        assert_eq!(b.colluding_client, 3);
    }

    #[test]
    fn colluding_client_has_13_of_23_members() {
        let b = generate_scenario(&small_cfg()).unwrap();
        let truth = b.truth_map();
        let n = b.clients[3]
            .relevant
            .records
            .iter()
            .filter(|r| truth[r.id.as_str()] == Some(3))
            .count();
        assert_eq!(n, 13);
    }

    #[test]
    fn zero_fraction_gives_no_relevant_members() {
        let cfg = ScenarioConfig {
            relevant_member_fractions: vec![0.0; 4],
            ..small_cfg()
        };
        let b = generate_scenario(&cfg).unwrap();
        let truth = b.truth_map();
        for c in &b.clients {
            assert!(c.relevant.records.iter().all(|r| truth[r.id.as_str()].is_none()));
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let a = generate_scenario(&small_cfg()).unwrap();
        let b = generate_scenario(&small_cfg()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_scenario(&ScenarioConfig {
            seed: 1,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unachievable_fraction_rejected() {
        let cfg = ScenarioConfig {
            relevant_member_fractions: vec![0.2, 0.9, 0.2, 0.5],
            ..small_cfg()
        };
        let err = generate_scenario(&cfg).unwrap_err();
        assert!(err.to_string().contains("client 1"), "{err}");
    }

    #[test]
    fn floor_is_quarter_without_leaked_challenge_members() {
        let b = generate_scenario(&small_cfg()).unwrap();
        assert!((b.random_floor() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn csv_missing_label_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "record_id,f0,f1\nr1,0.1,0.2\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, 4, None).err().unwrap();
        assert!(err.to_string().contains("task_label"), "{err}");
    }

    #[test]
    fn csv_three_rows_and_row_numbered_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(
            &p,
            "record_id,f0,f1,task_label,member_of\nr1,0.1,0.2,0,\nr2,1,2,3,1\nr3,-1,5e-3,2,\n",
        )
        .unwrap();
        let loaded = load_dataset(&p, DataFormat::Csv, 4, Some(4)).unwrap();
        assert_eq!(loaded.dataset.len(), 3);
        let m = loaded.memberships.unwrap();
        assert_eq!(m[1].member_of, Some(1));
        assert_eq!(m[0].member_of, None);

        std::fs::write(&p, "record_id,f0,task_label\nr1,0.1,0\nr2,abc,1\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, 4, None).err().unwrap();
        assert!(matches!(err, Error::Row { row: 3, .. }), "{err}");

        std::fs::write(&p, "record_id,f0,task_label\nr1,0.1,7\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, 4, None).err().unwrap();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");

        std::fs::write(&p, "id,f0,task_label\nr1,0.1,0\n").unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::Csv, 4, None),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn prediction_rows_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "record_id,p0,p1,p2,p3\nr1,0.25,0.25,0.25,0.25\n").unwrap();
        let m = load_prediction_matrix(&p).unwrap();
        assert_eq!(m.probs[0], vec![0.25; 4]);

        std::fs::write(&p, "record_id,p0,p1\nr1,0.25,0.25\n").unwrap();
        assert!(matches!(load_prediction_matrix(&p), Err(Error::Row { row: 2, .. })));

        std::fs::write(&p, "record_id,p0,p1\nr1,1.1,-0.1\n").unwrap();
        assert!(load_prediction_matrix(&p).is_err());

        std::fs::write(&p, "record_id,p0,p1\nr1,0.5004,0.5\n").unwrap();
        let m = load_prediction_matrix(&p).unwrap();
        assert!((m.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
