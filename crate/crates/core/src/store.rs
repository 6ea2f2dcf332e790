//! File formats: JSONL datasets, reward-group matrices, human CSV import.
//!
//! Dataset files start with a header line followed by one trajectory per line.
//! Choices on disk use the task's external arm labels (1-based for the
//! two-armed task, 0-based for the four-armed task).

use crate::domain::{validate_dataset, Dataset, EnvRef, EnvSpec, RewardGroup, Step, Trajectory, Truncation, Variant, Violation};
use crate::learner::LearnerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema version {found} not supported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("dataset failed validation with {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("column `{0}` is required but not mapped or not present")]
    MissingColumn(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Write via a temporary file in the target directory, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| StoreError::Other(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Parse { line: e.line(), message: e.to_string() })
}

/// SHA-256 over the canonical JSON of the environment, learner and seeds.
pub fn fingerprint(spec: &EnvSpec, learner: Option<&LearnerConfig>, seeds: &[u64]) -> String {
    let v = serde_json::json!({ "env_spec": spec, "learner": learner, "seeds": seeds });
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub kind: String,
    pub env_spec: EnvSpec,
    pub agent_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Truncation>,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEnv {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_means: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireStep {
    pub round: usize,
    pub choice: i64,
    pub reward: f64,
}

/// One trajectory as stored on a JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub subject_id: String,
    pub trial_index: usize,
    pub env: WireEnv,
    pub steps: Vec<WireStep>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, spec: &EnvSpec) -> Self {
        let env = match &t.env {
            EnvRef::TrueMeans(m) => WireEnv { variant: spec.variant, group_id: None, true_means: Some(m.clone()) },
            EnvRef::Group(g) => WireEnv { variant: spec.variant, group_id: Some(*g), true_means: None },
        };
        Self {
            schema_version: SCHEMA_VERSION,
            subject_id: t.subject_id.clone(),
            trial_index: t.trial_index,
            env,
            steps: t
                .steps
                .iter()
                .map(|s| WireStep { round: s.round, choice: spec.arm_label(s.choice), reward: s.reward })
                .collect(),
        }
    }

    pub fn into_trajectory(self, spec: &EnvSpec) -> Result<Trajectory, String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} not supported", self.schema_version));
        }
        if self.env.variant != spec.variant {
            return Err(format!("variant {} does not match header {}", self.env.variant, spec.variant));
        }
        let env = match (self.env.true_means, self.env.group_id) {
            (Some(m), None) => EnvRef::TrueMeans(m),
            (None, Some(g)) => EnvRef::Group(g),
            _ => return Err("env must carry exactly one of group_id and true_means".into()),
        };
        let steps = self
            .steps
            .into_iter()
            .map(|s| {
                let choice = spec
                    .arm_from_label(s.choice)
                    .ok_or_else(|| format!("round {}: choice label {} not an arm", s.round, s.choice))?;
                if !s.reward.is_finite() {
                    return Err(format!("round {}: non-finite reward", s.round));
                }
                Ok(Step { round: s.round, choice, reward: s.reward })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Trajectory { subject_id: self.subject_id, trial_index: self.trial_index, env, steps })
    }
}

/// Extra provenance stored in a dataset header.
#[derive(Clone, Debug, Default)]
pub struct Provenance {
    pub learner: Option<LearnerConfig>,
    pub seeds: Vec<u64>,
}

pub fn dataset_to_jsonl(d: &Dataset, prov: &Provenance) -> String {
    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        kind: "dataset".into(),
        env_spec: d.env_spec.clone(),
        agent_label: d.agent_label.clone(),
        truncation: d.truncation.clone(),
        fingerprint: fingerprint(&d.env_spec, prov.learner.as_ref(), &prov.seeds),
        learner: prov.learner.clone(),
        seeds: prov.seeds.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &d.trajectories {
        out.push_str(&serde_json::to_string(&TrajectoryRecord::from_trajectory(t, &d.env_spec)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn export_dataset(d: &Dataset, path: &Path, prov: &Provenance) -> Result<(), StoreError> {
    write_atomic(path, dataset_to_jsonl(d, prov).as_bytes())
}

/// Parse JSONL without validating trajectory invariants.
pub fn parse_dataset_jsonl(reader: impl BufRead) -> Result<(Dataset, DatasetHeader), StoreError> {
    let mut lines = reader.lines().enumerate();
    let header: DatasetHeader = loop {
        match lines.next() {
            None => return Err(StoreError::Parse { line: 1, message: "missing header line".into() }),
            Some((i, line)) => {
                let line = line.map_err(|e| StoreError::Parse { line: i + 1, message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| StoreError::Parse { line: i + 1, message: format!("header: {e}") })?;
            }
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(StoreError::Schema { found: header.schema_version });
    }
    let mut trajectories = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| StoreError::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::Parse { line: i + 1, message: e.to_string() })?;
        let t = rec.into_trajectory(&header.env_spec).map_err(|message| StoreError::Parse { line: i + 1, message })?;
        trajectories.push(t);
    }
    let mut d = Dataset::new(header.env_spec.clone(), header.agent_label.clone(), trajectories);
    d.truncation = header.truncation.clone();
    Ok((d, header))
}

/// Read and validate a JSONL dataset.
pub fn import_dataset(path: &Path) -> Result<Dataset, StoreError> {
    Ok(import_dataset_with_header(path)?.0)
}

pub fn import_dataset_with_header(path: &Path) -> Result<(Dataset, DatasetHeader), StoreError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let (d, h) = parse_dataset_jsonl(BufReader::new(f))?;
    let v = validate_dataset(&d);
    if !v.is_empty() {
        return Err(StoreError::Invalid(v));
    }
    Ok((d, h))
}

/// Column mapping for human-data CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvMapping {
    pub variant: Variant,
    pub subject: String,
    /// Game/block column; absent means one trial per subject.
    #[serde(default)]
    pub trial: Option<String>,
    pub round: String,
    pub choice: String,
    pub reward: String,
    /// Stationary2: one column per arm holding the true means.
    #[serde(default)]
    pub true_means: Vec<String>,
    /// Restless4: reward-group id column.
    #[serde(default)]
    pub group: Option<String>,
    /// Label of the first arm in the file; defaults to the task's own labelling.
    #[serde(default)]
    pub first_arm_label: Option<i64>,
    /// Allowed group ids for Restless4 files.
    #[serde(default = "default_groups")]
    pub allowed_groups: Vec<u32>,
    #[serde(default)]
    pub agent_label: Option<String>,
}

fn default_groups() -> Vec<u32> {
    vec![1, 2, 3]
}

impl CsvMapping {
    pub fn default_for(variant: Variant) -> Self {
        Self {
            variant,
            subject: "subject".into(),
            trial: Some("game".into()),
            round: "round".into(),
            choice: "choice".into(),
            reward: "reward".into(),
            true_means: match variant {
                Variant::Stationary2 => vec!["mean_1".into(), "mean_2".into()],
                Variant::Restless4 => Vec::new(),
            },
            group: match variant {
                Variant::Stationary2 => None,
                Variant::Restless4 => Some("group".into()),
            },
            first_arm_label: None,
            allowed_groups: default_groups(),
            agent_label: None,
        }
    }
}

pub fn import_human_csv(path: &Path, mapping: &CsvMapping) -> Result<Dataset, StoreError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_human_csv(f, mapping)
}

pub fn read_human_csv(reader: impl std::io::Read, mapping: &CsvMapping) -> Result<Dataset, StoreError> {
    let spec = EnvSpec::preset(mapping.variant);
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| StoreError::Parse { line: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| StoreError::MissingColumn(name.to_string()))
    };
    let c_subject = col(&mapping.subject)?;
    let c_trial = mapping.trial.as_deref().map(col).transpose()?;
    let c_round = col(&mapping.round)?;
    let c_choice = col(&mapping.choice)?;
    let c_reward = col(&mapping.reward)?;
    let (c_means, c_group) = match mapping.variant {
        Variant::Stationary2 => {
            if mapping.true_means.len() != spec.n_arms {
                return Err(StoreError::MissingColumn("true_means (one per arm)".into()));
            }
            (mapping.true_means.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?, None)
        }
        Variant::Restless4 => {
            let g = mapping.group.as_deref().ok_or_else(|| StoreError::MissingColumn("group".into()))?;
            (Vec::new(), Some(col(g)?))
        }
    };
    let offset = mapping.first_arm_label.unwrap_or(spec.arm_label(0));

    // (subject, trial) → (env, steps) in file order of first appearance.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut trials: BTreeMap<(String, String), (EnvRef, Vec<Step>)> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| StoreError::Parse { line, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64, StoreError> {
            field(c).parse::<f64>().map_err(|_| StoreError::Parse { line, message: format!("{what} `{}` is not a number", field(c)) })
        };
        let subject = field(c_subject).to_string();
        let trial = c_trial.map(|c| field(c).to_string()).unwrap_or_default();
        let round = num(c_round, "round")?;
        let label = num(c_choice, "choice")?;
        let reward = num(c_reward, "reward")?;
        if round < 1.0 || round.fract() != 0.0 || label.fract() != 0.0 {
            return Err(StoreError::Parse { line, message: "round and choice must be integers".into() });
        }
        let arm = label as i64 - offset;
        if arm < 0 || arm as usize >= spec.n_arms {
            return Err(StoreError::Parse { line, message: format!("choice {label} is not an arm") });
        }
        let env = match c_group {
            Some(c) => {
                let g: u32 = field(c)
                    .parse()
                    .map_err(|_| StoreError::Parse { line, message: format!("group `{}` is not an id", field(c)) })?;
                if !mapping.allowed_groups.contains(&g) {
                    return Err(StoreError::Parse { line, message: format!("group {g} not in {:?}", mapping.allowed_groups) });
                }
                EnvRef::Group(g)
            }
            None => EnvRef::TrueMeans(c_means.iter().map(|&c| num(c, "true mean")).collect::<Result<_, _>>()?),
        };
        let key = (subject, trial);
        let entry = trials.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (env.clone(), Vec::new())
        });
        if entry.0 != env {
            return Err(StoreError::Parse { line, message: "environment changes within a trial".into() });
        }
        entry.1.push(Step { round: round as usize, choice: arm as usize, reward });
    }
    let mut trajectories = Vec::with_capacity(order.len());
    let mut horizon = None;
    for (idx, key) in order.into_iter().enumerate() {
        let (env, mut steps) = trials.remove(&key).expect("present");
        steps.sort_by_key(|s| s.round);
        match horizon {
            None => horizon = Some(steps.len()),
            Some(h) if h != steps.len() => {
                return Err(StoreError::Shape(format!(
                    "inconsistent horizons: subject {} trial {} has {} rounds, expected {h}",
                    key.0,
                    key.1,
                    steps.len()
                )))
            }
            _ => {}
        }
        trajectories.push(Trajectory { subject_id: key.0, trial_index: idx, env, steps });
    }
    let spec = spec.with_horizon(horizon.unwrap_or(1));
    let d = Dataset::new(spec, mapping.agent_label.clone().unwrap_or_else(|| "human".into()), trajectories);
    let v = validate_dataset(&d);
    if !v.is_empty() {
        return Err(StoreError::Invalid(v));
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSidecar {
    pub schema_version: u32,
    pub group_id: u32,
    pub seed: u64,
    pub env_spec: EnvSpec,
    pub fingerprint: String,
}

/// Paths `<stem>.means.csv`, `<stem>.rewards.csv`, `<stem>.json`.
pub fn group_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (
        PathBuf::from(format!("{s}.means.csv")),
        PathBuf::from(format!("{s}.rewards.csv")),
        PathBuf::from(format!("{s}.json")),
    )
}

fn matrix_csv(m: &[Vec<f64>]) -> Result<String, StoreError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in m {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| StoreError::Other(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| StoreError::Other(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| StoreError::Other(e.to_string()))
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, StoreError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| StoreError::Other(e.to_string()))?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| StoreError::Parse { line: i + 1, message: e.to_string() })?;
            rec.iter()
                .map(|v| v.trim().parse::<f64>().map_err(|_| StoreError::Parse { line: i + 1, message: format!("`{v}` is not a number") }))
                .collect()
        })
        .collect()
}

pub fn export_group(g: &RewardGroup, spec: &EnvSpec, stem: &Path) -> Result<(), StoreError> {
    let (means, rewards, side) = group_paths(stem);
    write_atomic(&means, matrix_csv(&g.means)?.as_bytes())?;
    write_atomic(&rewards, matrix_csv(&g.rewards)?.as_bytes())?;
    write_json(
        &side,
        &GroupSidecar {
            schema_version: SCHEMA_VERSION,
            group_id: g.group_id,
            seed: g.seed,
            env_spec: spec.clone(),
            fingerprint: fingerprint(spec, None, &[g.seed]),
        },
    )
}

pub fn import_group(stem: &Path) -> Result<(RewardGroup, EnvSpec), StoreError> {
    let (means_p, rewards_p, side_p) = group_paths(stem);
    let side: GroupSidecar = read_json(&side_p)?;
    let means = read_matrix(&means_p)?;
    let rewards = read_matrix(&rewards_p)?;
    let spec = side.env_spec;
    for (name, m) in [("means", &means), ("rewards", &rewards)] {
        if m.len() != spec.n_arms {
            return Err(StoreError::Shape(format!("{name}: {} rows, expected {} arms", m.len(), spec.n_arms)));
        }
        if let Some(r) = m.iter().find(|r| r.len() != spec.horizon) {
            return Err(StoreError::Shape(format!("{name}: row of {} columns, expected {} rounds", r.len(), spec.horizon)));
        }
    }
    if spec.integer_rewards && rewards.iter().flatten().any(|r| r.fract() != 0.0) {
        return Err(StoreError::Shape("non-integer reward in an integer-reward group".into()));
    }
    Ok((RewardGroup { group_id: side.group_id, means, rewards, seed: side.seed }, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::gen_reward_group;

    fn sample() -> Dataset {
        let t = |s: &str, i: usize| Trajectory {
            subject_id: s.into(),
            trial_index: i,
            env: EnvRef::TrueMeans(vec![0.1 + i as f64, -3.7]),
            steps: (1..=10).map(|r| Step { round: r, choice: r % 2, reward: (r as f64) * 1.1 }).collect(),
        };
        Dataset::new(EnvSpec::stationary2(), "ucb", vec![t("a", 0), t("a", 1), t("b", 2)])
    }

    #[test]
    fn jsonl_round_trip_and_line_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let d = sample();
        export_dataset(&d, &p, &Provenance::default()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains(r#""choice":2"#));
        assert_eq!(import_dataset(&p).unwrap(), d);
    }

    #[test]
    fn missing_reward_names_line() {
        let d = sample();
        let text = dataset_to_jsonl(&d, &Provenance::default());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen(r#","reward":1.1"#, "", 1);
        let err = parse_dataset_jsonl(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            StoreError::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("reward"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invalid_dataset_lists_violations() {
        let mut d = sample();
        d.trajectories[0].steps.pop();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        export_dataset(&d, &p, &Provenance::default()).unwrap();
        assert!(matches!(import_dataset(&p), Err(StoreError::Invalid(v)) if v.len() == 1));
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let a = fingerprint(&EnvSpec::stationary2(), None, &[1]);
        assert_eq!(a, fingerprint(&EnvSpec::stationary2(), None, &[1]));
        assert_ne!(a, fingerprint(&EnvSpec::stationary2(), None, &[2]));
        assert_ne!(a, fingerprint(&EnvSpec::stationary2(), Some(&LearnerConfig::stationary2()), &[1]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn human_csv_two_subjects() {
        let mut csv = String::from("subject,game,round,choice,reward,mean_1,mean_2\n");
        for s in ["p1", "p2"] {
            for g in 1..=2 {
                for r in 1..=10 {
                    csv.push_str(&format!("{s},{g},{r},{},{},4.5,-2\n", 1 + r % 2, r * 3));
                }
            }
        }
        let d = read_human_csv(csv.as_bytes(), &CsvMapping::default_for(Variant::Stationary2)).unwrap();
        assert_eq!(d.subjects().len(), 2);
        assert_eq!(d.trajectories.len(), 4);
        assert_eq!(d.trajectories[0].steps[0].choice, 1);
        assert_eq!(d.trajectories[0].steps[1].choice, 0);
        // Choices survive an export/import cycle.
        let back = parse_dataset_jsonl(dataset_to_jsonl(&d, &Provenance::default()).as_bytes()).unwrap().0;
        assert_eq!(back, d);
    }

    #[test]
    fn human_csv_rejects_unknown_group() {
        let mut csv = String::from("subject,round,choice,reward,group\n");
        for r in 1..=300 {
            csv.push_str(&format!("p1,{r},0,50,4\n"));
        }
        let mut m = CsvMapping::default_for(Variant::Restless4);
        m.trial = None;
        let err = read_human_csv(csv.as_bytes(), &m).unwrap_err();
        assert!(err.to_string().contains("group 4"), "{err}");
    }

    #[test]
    fn human_csv_unmapped_column() {
        let csv = "subject,game,round,pick,reward,mean_1,mean_2\n";
        let err = read_human_csv(csv.as_bytes(), &CsvMapping::default_for(Variant::Stationary2)).unwrap_err();
        assert!(matches!(err, StoreError::MissingColumn(c) if c == "choice"));
    }

    #[test]
    fn human_csv_inconsistent_horizons() {
        let mut csv = String::from("subject,game,round,choice,reward,mean_1,mean_2\n");
        for r in 1..=10 {
            csv.push_str(&format!("p1,1,{r},1,0,0,0\n"));
        }
        for r in 1..=9 {
            csv.push_str(&format!("p1,2,{r},1,0,0,0\n"));
        }
        let err = read_human_csv(csv.as_bytes(), &CsvMapping::default_for(Variant::Stationary2)).unwrap_err();
        assert!(matches!(err, StoreError::Shape(_)));
    }

    #[test]
    fn group_round_trip_and_regeneration() {
        let spec = EnvSpec::restless4();
        let dir = tempfile::tempdir().unwrap();
        for gid in 1..=3u32 {
            let g = gen_reward_group(&spec, gid, gid as u64).unwrap();
            let stem = dir.path().join(format!("group{gid}"));
            export_group(&g, &spec, &stem).unwrap();
            let (back, s2) = import_group(&stem).unwrap();
            assert_eq!(back, g);
            assert_eq!(s2, spec);
            assert_eq!(gen_reward_group(&s2, back.group_id, back.seed).unwrap(), back);
        }
    }

    #[test]
    fn group_wrong_row_count() {
        let spec = EnvSpec::restless4();
        let g = gen_reward_group(&spec, 1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("g");
        export_group(&g, &spec, &stem).unwrap();
        let (means, _, _) = group_paths(&stem);
        let text = fs::read_to_string(&means).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        fs::write(&means, cut.join("\n")).unwrap();
        assert!(matches!(import_group(&stem), Err(StoreError::Shape(_))));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
