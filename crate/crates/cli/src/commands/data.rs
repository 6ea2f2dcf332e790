//! metrics and import.

use std::path::{Path, PathBuf};

use banditlab_core::metrics::{
    bayes_regret, curves_csv, default_windows, exploitation_rate, realized_regret, windows_csv, ExploitRule,
    ExploitationReport, RegretPoint,
};
use banditlab_core::store::{dataset_to_jsonl, import_human_csv, CsvMapping, Provenance};
use banditlab_core::Variant;
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{load_dataset, load_groups, require_data, write};
use crate::error::{runtime, usage, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub data: Option<PathBuf>,
    pub rule: ExploitRule,
    /// Window ends for cumulative exploitation rates; default every 10 rounds.
    pub windows: Option<Vec<usize>>,
    /// Reward groups for realized regret; default groups when absent.
    pub groups_dir: Option<PathBuf>,
    /// Column label in the CSV files; default the dataset's agent label.
    pub label: Option<String>,
}

#[derive(Args, Debug, Default, Serialize)]
pub struct MetricsArgs {
    /// Dataset (.jsonl)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Exploitation counting rule
    #[arg(long, value_parser = ["all_rounds", "skip_warmup"])]
    pub rule: Option<String>,
    /// Window ends, comma separated
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Directory of reward groups written by gen-env
    #[arg(long)]
    pub groups_dir: Option<PathBuf>,
    /// Column label in the CSV files
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub agent: String,
    pub trials: usize,
    pub exploitation: ExploitationReport,
    /// `bayes` for the two-armed task, `realized` for the restless task.
    pub regret_kind: String,
    pub final_regret: Option<RegretPoint>,
    pub regret_non_decreasing: bool,
    pub files: Vec<PathBuf>,
}

pub fn metrics(cfg: &MetricsConfig, out: &Path) -> Result<MetricsReport> {
    let (d, _) = load_dataset(require_data(&cfg.data)?)?;
    if d.trajectories.is_empty() {
        return Err(usage("empty dataset"));
    }
    let windows = cfg.windows.clone().unwrap_or_else(|| default_windows(d.env_spec.horizon));
    let exploitation = exploitation_rate(&d, &windows, cfg.rule);
    let (kind, curve) = match d.env_spec.variant {
        Variant::Stationary2 => ("bayes", bayes_regret(&d).map_err(usage)?),
        Variant::Restless4 => {
            let groups = load_groups(&d.env_spec, cfg.groups_dir.as_deref())?;
            ("realized", realized_regret(&d, &groups).map_err(usage)?)
        }
    };
    let label = cfg.label.clone().unwrap_or_else(|| d.agent_label.clone());
    let files = vec![
        write(out, "exploitation.csv", windows_csv(&[(&label, &exploitation)]).map_err(runtime)?.as_bytes())?,
        write(out, "regret.csv", curves_csv(&[(&label, &curve)]).map_err(runtime)?.as_bytes())?,
    ];
    Ok(MetricsReport {
        agent: d.agent_label.clone(),
        trials: d.trajectories.len(),
        exploitation,
        regret_kind: kind.into(),
        final_regret: curve.final_point().cloned(),
        regret_non_decreasing: curve.is_non_decreasing(),
        files,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportConfig {
    pub csv: Option<PathBuf>,
    pub env: Variant,
    /// Column mapping; the task default when absent.
    pub mapping: Option<CsvMapping>,
    pub output: String,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self { csv: None, env: Variant::Stationary2, mapping: None, output: "dataset.jsonl".into() }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct ImportArgs {
    /// Human choice data (.csv)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Task variant
    #[arg(long, value_parser = ["stationary2", "restless4"])]
    pub env: Option<String>,
    /// Dataset file name inside the output directory
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ImportReport {
    pub subjects: usize,
    pub trials: usize,
    pub dataset: PathBuf,
}

pub fn import(cfg: &ImportConfig, out: &Path) -> Result<ImportReport> {
    let csv = cfg.csv.as_deref().ok_or_else(|| usage("missing `csv`"))?;
    let mapping = cfg.mapping.clone().unwrap_or_else(|| CsvMapping::default_for(cfg.env));
    if mapping.variant != cfg.env {
        return Err(usage("mapping.variant differs from env"));
    }
    let d = import_human_csv(csv, &mapping)?;
    let subjects: std::collections::BTreeSet<&str> = d.trajectories.iter().map(|t| t.subject_id.as_str()).collect();
    let path = write(out, &cfg.output, dataset_to_jsonl(&d, &Provenance::default()).as_bytes())?;
    Ok(ImportReport { subjects: subjects.len(), trials: d.trajectories.len(), dataset: path })
}
