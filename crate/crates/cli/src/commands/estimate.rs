//! fit, loo, recover, qcare and ident.

use std::path::{Path, PathBuf};

use banditlab_core::choice::Model;
use banditlab_core::estim::{
    fit_hier, fit_qcare, prepare, psis_loo, recover as run_recovery, simulate_subjects, HierPrior, LooConfig,
    LooReport, McmcConfig, ParamSummary, QcareReport, RecoveryPreset, RecoveryReport,
};
use banditlab_core::ident::{build_design, rank_check, FeatureRows, RankReport};
use banditlab_core::{EnvSpec, LearnerConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{learner_for, load_dataset, require_data, write, write_json};
use crate::error::{usage, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub data: Option<PathBuf>,
    pub model: Model,
    pub mcmc: McmcConfig,
    /// Scale of the half-Cauchy prior on group SDs.
    pub sigma_scale: f64,
    /// Overrides the learner stored with the dataset.
    pub learner: Option<LearnerConfig>,
    /// Write every draw to posterior.json.
    pub save_posterior: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: Model::Sm3,
            mcmc: McmcConfig::default(),
            sigma_scale: 1.0,
            learner: None,
            save_posterior: true,
        }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct FitArgs {
    /// Dataset (.jsonl)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Choice model
    #[arg(long, value_parser = ["sm1", "sm2", "sm3", "probit", "qcare"])]
    pub model: Option<String>,
    /// Write every draw to posterior.json
    #[arg(long)]
    pub save_posterior: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub model: Model,
    pub n_subjects: usize,
    pub n_choices: usize,
    pub n_draws: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub group: Vec<ParamSummary>,
    pub summary_csv: PathBuf,
    pub posterior: Option<PathBuf>,
    pub runtime_secs: f64,
}

fn prior(model: Model, sigma_scale: f64) -> Result<HierPrior> {
    if !(sigma_scale.is_finite() && sigma_scale > 0.0) {
        return Err(usage("sigma_scale must be positive"));
    }
    Ok(HierPrior { sigma_scale, ..HierPrior::preset(model) })
}

pub fn fit(cfg: &FitConfig, out: &Path) -> Result<FitReport> {
    let (d, header) = load_dataset(require_data(&cfg.data)?)?;
    let learner = learner_for(&header, cfg.learner.as_ref());
    let start = std::time::Instant::now();
    let post = fit_hier(cfg.model, &d, &prior(cfg.model, cfg.sigma_scale)?, &learner, &cfg.mcmc)?;
    let summary_csv = write(out, "summary.csv", post.summary_csv().as_bytes())?;
    let posterior = if cfg.save_posterior { Some(write_json(out, "posterior.json", &post)?) } else { None };
    Ok(FitReport {
        model: cfg.model,
        n_subjects: post.subject_ids.len(),
        n_choices: post.n_choices,
        n_draws: post.n_draws(),
        converged: post.converged,
        warnings: post.warnings.clone(),
        group: post.group_summary(),
        summary_csv,
        posterior,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LooCmdConfig {
    pub data: Option<PathBuf>,
    pub models: Vec<Model>,
    pub mcmc: McmcConfig,
    pub sigma_scale: f64,
    pub learner: Option<LearnerConfig>,
    pub loo: LooConfig,
}

impl Default for LooCmdConfig {
    fn default() -> Self {
        Self {
            data: None,
            models: vec![Model::Sm1, Model::Sm2, Model::Sm3],
            mcmc: McmcConfig::default(),
            sigma_scale: 1.0,
            learner: None,
            loo: LooConfig::default(),
        }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct LooArgs {
    /// Dataset (.jsonl)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Models to compare, comma separated
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Serialize)]
pub struct LooCmdReport {
    pub reports: Vec<LooReport>,
    pub converged: Vec<(Model, bool)>,
    /// Models from best to worst normalised elpd.
    pub ranking: Vec<(Model, f64)>,
}

impl LooCmdReport {
    pub fn get(&self, m: Model) -> Option<&LooReport> {
        self.reports.iter().find(|r| r.model == m)
    }
}

pub fn loo(cfg: &LooCmdConfig, out: &Path) -> Result<LooCmdReport> {
    if cfg.models.is_empty() {
        return Err(usage("models is empty"));
    }
    let (d, header) = load_dataset(require_data(&cfg.data)?)?;
    let learner = learner_for(&header, cfg.learner.as_ref());
    let mut reports = Vec::new();
    let mut converged = Vec::new();
    for &m in &cfg.models {
        tracing::info!(model = %m, "fitting for loo");
        let post = fit_hier(m, &d, &prior(m, cfg.sigma_scale)?, &learner, &cfg.mcmc)?;
        converged.push((m, post.converged));
        reports.push(psis_loo(&post, &d, &cfg.loo)?);
    }
    let mut ranking: Vec<(Model, f64)> = reports.iter().map(|r| (r.model, r.elpd_normalized)).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    write_json(out, "loo.json", &reports)?;
    Ok(LooCmdReport { reports, converged, ranking })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub preset: String,
    /// Replaces both the simulation and the sampler seed.
    pub seed: Option<u64>,
    pub subjects: Option<usize>,
    pub mcmc: Option<McmcConfig>,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self { preset: "table2".into(), seed: None, subjects: None, mcmc: None }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct RecoverArgs {
    /// Named truth/setting preset
    #[arg(long, value_parser = ["table2"])]
    pub preset: Option<String>,
    /// Seed of simulation and sampler
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of simulated subjects
    #[arg(long)]
    pub subjects: Option<usize>,
}

pub fn recovery_preset(cfg: &RecoverConfig) -> Result<RecoveryPreset> {
    let mut p = RecoveryPreset::by_name(&cfg.preset).ok_or_else(|| usage(format!("unknown preset `{}`", cfg.preset)))?;
    if let Some(m) = &cfg.mcmc {
        p.mcmc = m.clone();
    }
    if let Some(s) = cfg.seed {
        p.seed = s;
        p.mcmc.seed = s;
    }
    if let Some(n) = cfg.subjects {
        p.n_subjects = n;
    }
    Ok(p)
}

pub fn recover(cfg: &RecoverConfig, out: &Path) -> Result<RecoveryReport> {
    let preset = recovery_preset(cfg)?;
    let (report, post) = run_recovery(&preset)?;
    write(out, "summary.csv", post.summary_csv().as_bytes())?;
    write_json(out, "recovery.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcareSim {
    pub alpha: f64,
    pub subjects: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for QcareSim {
    fn default() -> Self {
        Self { alpha: 0.5, subjects: 100, horizon: 300, seed: 1 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcareConfig {
    pub data: Option<PathBuf>,
    /// Simulate QCARE agents instead of reading `data`.
    pub simulate: Option<QcareSim>,
}

#[derive(Args, Debug, Default, Serialize)]
pub struct QcareArgs {
    /// Dataset (.jsonl) of the two-armed task
    #[arg(long)]
    pub data: Option<PathBuf>,
}

pub fn qcare(cfg: &QcareConfig, out: &Path) -> Result<QcareReport> {
    let d = match (&cfg.data, &cfg.simulate) {
        (Some(p), None) => load_dataset(p)?.0,
        (None, Some(s)) => {
            if !(0.0..=3.0).contains(&s.alpha) {
                return Err(usage("simulate.alpha must lie in [0, 3]"));
            }
            let env = EnvSpec::stationary2().with_horizon(s.horizon);
            let learner = LearnerConfig::for_spec(&env);
            let (d, _) = simulate_subjects(
                Model::Qcare,
                &env,
                &[s.alpha],
                &[0.0],
                &HierPrior::preset(Model::Qcare),
                s.subjects,
                &learner,
                s.seed,
            )?;
            d
        }
        _ => return Err(usage("give exactly one of `data` and `simulate`")),
    };
    let report = fit_qcare(&d)?;
    write_json(out, "qcare.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentConfig {
    pub data: Option<PathBuf>,
    pub model: Model,
    pub learner: Option<LearnerConfig>,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self { data: None, model: Model::Sm3, learner: None }
    }
}

#[derive(Args, Debug, Default, Serialize)]
pub struct IdentArgs {
    /// Dataset (.jsonl)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Choice model
    #[arg(long, value_parser = ["sm1", "sm2", "sm3", "probit"])]
    pub model: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct IdentReport {
    pub model: Model,
    pub rows: usize,
    #[serde(flatten)]
    pub rank: RankReport,
}

pub fn ident(cfg: &IdentConfig, out: &Path) -> Result<IdentReport> {
    let (d, header) = load_dataset(require_data(&cfg.data)?)?;
    let learner = learner_for(&header, cfg.learner.as_ref());
    let subjects = prepare(&d, cfg.model, &learner)?;
    let trials: Vec<_> = subjects.iter().flat_map(|s| &s.trials).collect();
    let features = FeatureRows::from_prepared(&trials, cfg.model).map_err(usage)?;
    let m = build_design(&features).map_err(usage)?;
    let report = IdentReport { model: cfg.model, rows: m.nrows(), rank: rank_check(&m, cfg.model.n_params()) };
    write_json(out, "ident.json", &report)?;
    Ok(report)
}
