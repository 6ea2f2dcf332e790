//! Parameter-recovery harness: simulate subjects from a known hierarchy and
//! refit it.

use super::hier::{fit_hier, HierPosterior, McmcConfig, ParamSummary};
use super::prior::HierPrior;
use super::EstimError;
use crate::agents::{Agent, Simulated};
use crate::choice::Model;
use crate::domain::{Dataset, EnvSpec, Variant};
use crate::learner::LearnerConfig;
use crate::rng::{self, tags};
use crate::runner::{self, FnFactory, RunPlan};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryPreset {
    pub name: String,
    pub model: Model,
    pub variant: Variant,
    pub n_subjects: usize,
    pub horizon: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub seed: u64,
    pub mcmc: McmcConfig,
    /// Allowed relative error of each posterior group mean.
    pub mean_tolerance: f64,
}

impl RecoveryPreset {
    pub fn table2() -> Self {
        Self {
            name: "table2".into(),
            model: Model::Sm3,
            variant: Variant::Restless4,
            n_subjects: 100,
            horizon: 300,
            mu: vec![0.168, 0.879, 5.450],
            sigma: vec![0.053, 0.850, 0.268],
            seed: 7,
            mcmc: McmcConfig { iters: 3000, warmup: 1000, ..McmcConfig::with_seed(7) },
            mean_tolerance: 0.15,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        (name == "table2").then(Self::table2)
    }

    pub fn env(&self) -> EnvSpec {
        EnvSpec::preset(self.variant).with_horizon(self.horizon)
    }
}

fn draw_truncated(rng: &mut crate::SimRng, mu: f64, sigma: f64, bounds: Option<(f64, f64)>) -> f64 {
    if sigma == 0.0 {
        return mu;
    }
    for _ in 0..100_000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mu + sigma * z;
        match bounds {
            Some((lo, hi)) if x <= lo || x >= hi => continue,
            _ => return x,
        }
    }
    let (lo, hi) = bounds.expect("unbounded draws always succeed");
    mu.clamp(lo, hi)
}

/// Simulate one trial per subject with subject parameters drawn from the
/// truncated-normal hierarchy. Returns the dataset and the true parameters.
#[allow(clippy::too_many_arguments)]
pub fn simulate_subjects(
    model: Model,
    env: &EnvSpec,
    mu: &[f64],
    sigma: &[f64],
    prior: &HierPrior,
    n_subjects: usize,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<(Dataset, Vec<Vec<f64>>), EstimError> {
    if mu.len() != model.n_params() || sigma.len() != model.n_params() {
        return Err(EstimError::Config(format!("{model} needs {} group means and SDs", model.n_params())));
    }
    let truths: Vec<Vec<f64>> = (0..n_subjects)
        .map(|s| {
            let mut r = rng::stream(seed, &[tags::RUN_SUBJECT, s as u64]);
            prior.params.iter().enumerate().map(|(j, p)| draw_truncated(&mut r, mu[j], sigma[j], p.bounds)).collect()
        })
        .collect();
    let mut plan = RunPlan::new(env.clone(), n_subjects, seed);
    plan.trials_per_subject = 1;
    let groups = match env.variant {
        Variant::Restless4 => runner::default_groups(env).map_err(|e| EstimError::Config(e.to_string()))?,
        Variant::Stationary2 => Vec::new(),
    };
    let factory = FnFactory {
        label: format!("simulated-{model}"),
        f: |_: &EnvSpec, subject: usize, _trial: usize| {
            let params = model.params(&truths[subject])?;
            Ok(Box::new(Simulated::new(params, learner.clone())?) as Box<dyn Agent>)
        },
    };
    let result = runner::run(&plan, &factory, &groups).map_err(|e| EstimError::Config(e.to_string()))?;
    if !result.incomplete.is_empty() {
        return Err(EstimError::Config(format!("{} simulated trials failed", result.incomplete.len())));
    }
    Ok((result.dataset, truths))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCheck {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    pub in_ci: bool,
    /// Relative error of the posterior mean, checked for group means only.
    pub rel_error: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub preset: RecoveryPreset,
    pub checks: Vec<RecoveryCheck>,
    pub pass: bool,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// MAP group means used to initialise the chains.
    pub map_mu: Vec<f64>,
    pub runtime_secs: f64,
}

fn checks(preset: &RecoveryPreset, summary: &[ParamSummary]) -> Vec<RecoveryCheck> {
    let d = preset.mu.len();
    summary
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let is_mu = i < d;
            let truth = if is_mu { preset.mu[i] } else { preset.sigma[i - d] };
            let in_ci = s.contains(truth);
            let rel_error = is_mu.then(|| (s.mean - truth).abs() / truth.abs());
            let pass = in_ci && rel_error.is_none_or(|e| e <= preset.mean_tolerance);
            RecoveryCheck { name: s.name.clone(), truth, mean: s.mean, sd: s.sd, q05: s.q05, q95: s.q95, in_ci, rel_error, pass }
        })
        .collect()
}

/// Simulate, fit and compare against the truths.
pub fn recover(preset: &RecoveryPreset) -> Result<(RecoveryReport, HierPosterior), EstimError> {
    let start = std::time::Instant::now();
    let env = preset.env();
    let learner = LearnerConfig::for_spec(&env);
    let prior = HierPrior::preset(preset.model);
    let (data, _) = simulate_subjects(preset.model, &env, &preset.mu, &preset.sigma, &prior, preset.n_subjects, &learner, preset.seed)?;
    let post = fit_hier(preset.model, &data, &prior, &learner, &preset.mcmc)?;
    let checks = checks(preset, &post.group_summary());
    let report = RecoveryReport {
        preset: preset.clone(),
        pass: checks.iter().all(|c| c.pass),
        checks,
        converged: post.converged,
        warnings: post.warnings.clone(),
        map_mu: post.init.mu.clone(),
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, post))
}
