//! Experiment orchestration: trial loops, seeding, sweeps and truncation.

use crate::agents::{Agent, AgentError, AgentSpec, TrialContext};
use crate::domain::{Dataset, EnvRef, EnvSpec, RewardGroup, Step, Trajectory, Truncation, Variant};
use crate::envgen::{self, EnvError, EnvInstance, StationaryGame};
use crate::metrics;
use crate::rng::{self, tags};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("restless runs need at least one reward group")]
    NoGroups,
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Builds a fresh agent for each trial.
pub trait AgentFactory: Sync {
    fn label(&self) -> String;
    fn build(&self, spec: &EnvSpec, subject: usize, trial: usize) -> Result<Box<dyn Agent>, AgentError>;
}

impl AgentFactory for AgentSpec {
    fn label(&self) -> String {
        AgentSpec::label(self)
    }

    fn build(&self, spec: &EnvSpec, _subject: usize, _trial: usize) -> Result<Box<dyn Agent>, AgentError> {
        AgentSpec::build(self, spec)
    }
}

/// Adapter for closures `(subject, trial) → agent`.
pub struct FnFactory<F> {
    pub label: String,
    pub f: F,
}

impl<F> AgentFactory for FnFactory<F>
where
    F: Fn(&EnvSpec, usize, usize) -> Result<Box<dyn Agent>, AgentError> + Sync,
{
    fn label(&self) -> String {
        self.label.clone()
    }

    fn build(&self, spec: &EnvSpec, subject: usize, trial: usize) -> Result<Box<dyn Agent>, AgentError> {
        (self.f)(spec, subject, trial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub env: EnvSpec,
    pub n_trials: usize,
    /// Consecutive trials sharing one subject id.
    pub trials_per_subject: usize,
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub subject_prefix: String,
}

fn default_prefix() -> String {
    "s".into()
}

impl RunPlan {
    /// Default grouping: 20 games per subject for the two-armed task, one trial
    /// per subject for the restless task.
    pub fn new(env: EnvSpec, n_trials: usize, seed: u64) -> Self {
        let trials_per_subject = match env.variant {
            Variant::Stationary2 => env.games_per_session.max(1),
            Variant::Restless4 => 1,
        };
        Self { env, n_trials, trials_per_subject, seed, subject_prefix: default_prefix() }
    }

    pub fn subject_of(&self, trial: usize) -> usize {
        trial / self.trials_per_subject.max(1)
    }

    pub fn subject_id(&self, subject: usize) -> String {
        format!("{}{:03}", self.subject_prefix, subject + 1)
    }

    /// Seed of the stationary game used by `trial`; independent of the agent.
    pub fn game(&self, trial: usize) -> StationaryGame {
        let base = rng::derive(self.seed, &[tags::RUN_ENV]);
        StationaryGame::from_seed(&self.env, rng::derive(base, &[tags::STATIONARY_GAME, trial as u64]))
    }
}

/// Round-robin group for a trial.
pub fn assign_group(trial: usize, groups: &[Arc<RewardGroup>]) -> Option<Arc<RewardGroup>> {
    (!groups.is_empty()).then(|| groups[trial % groups.len()].clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompleteTrial {
    pub subject_id: String,
    pub trial_index: usize,
    pub round: usize,
    pub error: String,
    /// Steps completed before the failure.
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// Completed trials only.
    pub dataset: Dataset,
    pub incomplete: Vec<IncompleteTrial>,
}

impl RunResult {
    pub fn completion_rate(&self) -> f64 {
        let done = self.dataset.trajectories.len();
        let total = done + self.incomplete.len();
        if total == 0 {
            1.0
        } else {
            done as f64 / total as f64
        }
    }
}

fn run_trial(
    plan: &RunPlan,
    factory: &dyn AgentFactory,
    trial: usize,
    groups: &[Arc<RewardGroup>],
) -> Result<Trajectory, IncompleteTrial> {
    let subject = plan.subject_of(trial);
    let subject_id = plan.subject_id(subject);
    let fail = |round: usize, error: String, steps: Vec<Step>| IncompleteTrial {
        subject_id: subject_id.clone(),
        trial_index: trial,
        round,
        error,
        steps,
    };
    let (env, env_ref) = match plan.env.variant {
        Variant::Stationary2 => {
            let game = plan.game(trial);
            let r = EnvRef::TrueMeans(game.true_means.clone());
            (EnvInstance::stationary(&plan.env, game), r)
        }
        Variant::Restless4 => {
            let g = assign_group(trial, groups).ok_or_else(|| fail(0, RunError::NoGroups.to_string(), vec![]))?;
            let r = EnvRef::Group(g.group_id);
            (EnvInstance::Restless(g), r)
        }
    };
    let mut agent = factory.build(&plan.env, subject, trial).map_err(|e| fail(0, e.to_string(), vec![]))?;
    let ctx = TrialContext {
        spec: &plan.env,
        subject_id: &subject_id,
        trial_index: trial,
        game: trial % plan.trials_per_subject.max(1) + 1,
    };
    agent.begin_trial(&ctx).map_err(|e| fail(0, e.to_string(), vec![]))?;
    let mut agent_rng = rng::stream(plan.seed, &[tags::RUN_AGENT, trial as u64]);
    let mut steps = Vec::with_capacity(plan.env.horizon);
    for round in 1..=plan.env.horizon {
        let arm = match agent.act(round, &mut agent_rng) {
            Ok(a) => a,
            Err(e) => return Err(fail(round, e.to_string(), steps)),
        };
        let reward = match env.reward_at(arm, round) {
            Ok(r) => r,
            Err(e) => return Err(fail(round, e.to_string(), steps)),
        };
        if let Err(e) = agent.observe(round, arm, reward) {
            return Err(fail(round, e.to_string(), steps));
        }
        steps.push(Step { round, choice: arm, reward });
    }
    Ok(Trajectory { subject_id, trial_index: trial, env: env_ref, steps })
}

/// Run every trial of `plan`. Failed trials are reported, never substituted.
pub fn run(plan: &RunPlan, factory: &dyn AgentFactory, groups: &[RewardGroup]) -> Result<RunResult, RunError> {
    plan.env.validate().map_err(EnvError::from)?;
    if plan.trials_per_subject == 0 {
        return Err(RunError::Plan("trials_per_subject must be ≥ 1".into()));
    }
    if plan.env.variant == Variant::Restless4 {
        if groups.is_empty() {
            return Err(RunError::NoGroups);
        }
        if let Some(g) = groups.iter().find(|g| g.n_arms() != plan.env.n_arms || g.horizon() < plan.env.horizon) {
            return Err(RunError::Plan(format!("group {} does not fit the environment", g.group_id)));
        }
    }
    let groups: Vec<Arc<RewardGroup>> = groups.iter().cloned().map(Arc::new).collect();
    let outcomes: Vec<Result<Trajectory, IncompleteTrial>> =
        (0..plan.n_trials).into_par_iter().map(|t| run_trial(plan, factory, t, &groups)).collect();
    let mut trajectories = Vec::new();
    let mut incomplete = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => trajectories.push(t),
            Err(i) => {
                tracing::warn!(trial = i.trial_index, round = i.round, error = %i.error, "trial incomplete");
                incomplete.push(i)
            }
        }
    }
    Ok(RunResult { dataset: Dataset::new(plan.env.clone(), factory.label(), trajectories), incomplete })
}

/// Template used by the misspecification sweeps: two-armed, 300 rounds,
/// 300 trials grouped 20 per subject.
pub fn sweep_template(seed: u64) -> RunPlan {
    RunPlan::new(EnvSpec::stationary2().with_horizon(300), 300, seed)
}

pub fn default_eps_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

pub fn default_c_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

fn sweep(template: &RunPlan, specs: Vec<(f64, AgentSpec)>) -> Result<Vec<(f64, RunResult)>, RunError> {
    if specs.is_empty() {
        return Err(RunError::Plan("empty grid".into()));
    }
    specs.into_iter().map(|(x, spec)| Ok((x, run(template, &spec, &[])?))).collect()
}

/// One dataset per ε, all sharing environment seeds.
pub fn sweep_eps(template: &RunPlan, grid: &[f64]) -> Result<Vec<(f64, RunResult)>, RunError> {
    sweep(template, grid.iter().map(|&e| (e, AgentSpec::eps(e))).collect())
}

/// One dataset per UCB constant c, all sharing environment seeds.
pub fn sweep_ucb_c(template: &RunPlan, grid: &[f64]) -> Result<Vec<(f64, RunResult)>, RunError> {
    sweep(template, grid.iter().map(|&c| (c, AgentSpec::Ucb { c: Some(c), prior_sd: None })).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSearch {
    pub best_epsilon: f64,
    /// `(ε, mean final Bayesian regret)`.
    pub regrets: Vec<(f64, f64)>,
}

/// ε with the lowest mean final Bayesian regret on a two-armed plan.
pub fn eps_grid_search(plan: &RunPlan, grid: &[f64]) -> Result<EpsSearch, RunError> {
    if plan.env.variant != Variant::Stationary2 {
        return Err(RunError::Plan("ε grid search uses the two-armed task".into()));
    }
    let mut regrets = Vec::new();
    for (eps, res) in sweep_eps(plan, grid)? {
        let curve = metrics::bayes_regret(&res.dataset).map_err(|e| RunError::Plan(e.to_string()))?;
        regrets.push((eps, curve.final_point().map_or(f64::NAN, |p| p.mean)));
    }
    let best = regrets.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).map(|r| r.0).unwrap_or(f64::NAN);
    Ok(EpsSearch { best_epsilon: best, regrets })
}

/// Cut every trajectory to its first `t` rounds.
pub fn truncate(d: &Dataset, t: usize) -> Result<Dataset, RunError> {
    if t < 1 {
        return Err(RunError::Plan("truncation length must be ≥ 1".into()));
    }
    if t > d.env_spec.horizon {
        return Err(RunError::Plan(format!("cannot truncate {} rounds to {t}", d.env_spec.horizon)));
    }
    let mut out = d.clone();
    for tr in &mut out.trajectories {
        tr.steps.truncate(t);
    }
    let original = d.truncation.as_ref().map_or(d.env_spec.horizon, |x| x.original_horizon);
    out.env_spec.horizon = t;
    out.truncation = (t != original).then_some(Truncation { original_horizon: original, truncated_to: t });
    Ok(out)
}

/// Re-generate the default restless groups for a spec.
pub fn default_groups(spec: &EnvSpec) -> Result<Vec<RewardGroup>, RunError> {
    Ok(envgen::default_groups(spec)?)
}
