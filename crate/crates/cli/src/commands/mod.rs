pub mod data;
pub mod estimate;
pub mod plot;
pub mod sim;

use std::path::{Path, PathBuf};

use banditlab_core::domain::RewardGroup;
use banditlab_core::store::{self, DatasetHeader};
use banditlab_core::{Dataset, EnvSpec, LearnerConfig, Variant};

use crate::error::{runtime, usage, Result};

pub fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let p = out.join(name);
    store::write_atomic(&p, bytes)?;
    Ok(p)
}

pub fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    write(out, name, text.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, DatasetHeader)> {
    if !path.exists() {
        return Err(usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(store::import_dataset_with_header(path)?)
}

pub fn require_data(data: &Option<PathBuf>) -> Result<&Path> {
    data.as_deref().ok_or_else(|| usage("missing `data` (path to a dataset .jsonl)"))
}

/// Learner from the dataset header, falling back to the task default.
pub fn learner_for(header: &DatasetHeader, override_: Option<&LearnerConfig>) -> LearnerConfig {
    override_
        .cloned()
        .or_else(|| header.learner.clone())
        .unwrap_or_else(|| LearnerConfig::for_spec(&header.env_spec))
}

/// Every group stored under `dir`, or the default groups when `dir` is `None`.
pub fn load_groups(spec: &EnvSpec, dir: Option<&Path>) -> Result<Vec<RewardGroup>> {
    if spec.variant != Variant::Restless4 {
        return Ok(Vec::new());
    }
    let Some(dir) = dir else {
        return Ok(banditlab_core::runner::default_groups(spec)?);
    };
    let mut stems: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("groups dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| p.with_extension(""))
        .filter(|s| store::group_paths(s).1.exists())
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(usage(format!("no reward groups in {}", dir.display())));
    }
    let mut groups = Vec::new();
    for s in stems {
        let (g, gspec) = store::import_group(&s)?;
        if gspec.variant != spec.variant || g.horizon() < spec.horizon {
            return Err(usage(format!("group {} does not fit the environment", s.display())));
        }
        groups.push(g);
    }
    Ok(groups)
}
