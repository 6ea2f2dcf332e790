//! Agents: UCB, Thompson sampling, ε-greedy, replay of recorded data and
//! model-simulated subjects.
//!
//! Every agent is a single-threaded state machine driven by the runner:
//! `begin_trial` once per trial, then `act`/`observe` once per round.

use crate::choice::{self, ChoiceError, ChoiceParams, Context, Model};
use crate::domain::{EnvSpec, Trajectory, Variant};
use crate::learner::{self, BeliefState, LearnerConfig};
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay integrity: round {round} reward {found} differs from recorded {expected}")]
    ReplayIntegrity { round: usize, expected: f64, found: f64 },
    #[error("replay out of range: round {round}, recorded {recorded}")]
    ReplayRange { round: usize, recorded: usize },
    #[error("no recorded trajectory for trial {0}")]
    MissingTrial(usize),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error("agent failed: {0}")]
    Failed(String),
}

/// What an agent learns about the trial it is starting.
#[derive(Clone, Debug)]
pub struct TrialContext<'a> {
    pub spec: &'a EnvSpec,
    pub subject_id: &'a str,
    /// Global trial index within the run.
    pub trial_index: usize,
    /// 1-based game number within the subject's session.
    pub game: usize,
}

pub trait Agent: Send {
    fn label(&self) -> String;
    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError>;
    fn act(&mut self, round: usize, rng: &mut SimRng) -> Result<usize, AgentError>;
    fn observe(&mut self, round: usize, arm: usize, reward: f64) -> Result<(), AgentError>;
}

/// Running per-arm count, mean and sum of squared deviations (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmStats {
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
    m2: Vec<f64>,
}

impl ArmStats {
    pub fn new(n_arms: usize) -> Self {
        Self { counts: vec![0; n_arms], means: vec![0.0; n_arms], m2: vec![0.0; n_arms] }
    }

    pub fn push(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        let n = self.counts[arm] as f64;
        let delta = reward - self.means[arm];
        self.means[arm] += delta / n;
        self.m2[arm] += delta * (reward - self.means[arm]);
    }

    /// Sample SD (n − 1 denominator); `None` below two observations.
    pub fn sample_sd(&self, arm: usize) -> Option<f64> {
        (self.counts[arm] >= 2).then(|| (self.m2[arm] / (self.counts[arm] - 1) as f64).sqrt())
    }

    /// Lowest-index arm never pulled, if any.
    pub fn first_unpulled(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c == 0)
    }
}

/// Index of the maximum, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn check_arm(arm: usize, n_arms: usize) -> Result<(), AgentError> {
    if arm < n_arms {
        Ok(())
    } else {
        Err(AgentError::Failed(format!("arm {arm} out of range")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcbConfig {
    pub c: f64,
    pub prior_sd: f64,
}

impl UcbConfig {
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Stationary2 => Self { c: 2.0, prior_sd: 10f64.sqrt() },
            Variant::Restless4 => Self { c: 2.0, prior_sd: 2.0 },
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    fn validate(&self) -> Result<(), AgentError> {
        if self.c > 0.0 && self.prior_sd > 0.0 {
            Ok(())
        } else {
            Err(AgentError::Config(format!("ucb needs c > 0 and prior_sd > 0, got {self:?}")))
        }
    }
}

/// `f(t) = 1 + t·ln²t`.
pub fn ucb_f(t: usize) -> f64 {
    let t = t as f64;
    1.0 + t * t.ln().powi(2)
}

pub fn ucb_index(mean: f64, sd: f64, n: usize, t: usize, c: f64) -> f64 {
    mean + sd * (c * ucb_f(t).ln() / n as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Ucb {
    pub cfg: UcbConfig,
    stats: ArmStats,
}

impl Ucb {
    pub fn new(cfg: UcbConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self { cfg, stats: ArmStats::default() })
    }

    pub fn stats(&self) -> &ArmStats {
        &self.stats
    }

    pub fn choose(&self, t: usize) -> usize {
        if let Some(arm) = self.stats.first_unpulled() {
            return arm;
        }
        let idx: Vec<f64> = (0..self.stats.counts.len())
            .map(|k| {
                let sd = self.stats.sample_sd(k).unwrap_or(self.cfg.prior_sd);
                ucb_index(self.stats.means[k], sd, self.stats.counts[k], t, self.cfg.c)
            })
            .collect();
        argmax(&idx)
    }
}

impl Agent for Ucb {
    fn label(&self) -> String {
        format!("ucb(c={})", self.cfg.c)
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        self.stats = ArmStats::new(ctx.spec.n_arms);
        Ok(())
    }

    fn act(&mut self, round: usize, _rng: &mut SimRng) -> Result<usize, AgentError> {
        Ok(self.choose(round))
    }

    fn observe(&mut self, _round: usize, arm: usize, reward: f64) -> Result<(), AgentError> {
        check_arm(arm, self.stats.counts.len())?;
        self.stats.push(arm, reward);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsConfig {
    pub mu0: f64,
    pub lambda0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl TsConfig {
    pub fn for_variant(v: Variant) -> Self {
        let mu0 = match v {
            Variant::Stationary2 => 0.0,
            Variant::Restless4 => 50.0,
        };
        Self { mu0, lambda0: 1.0, alpha0: 1.0, beta0: 1.0 }
    }

    fn validate(&self) -> Result<(), AgentError> {
        if self.lambda0 > 0.0 && self.alpha0 > 0.0 && self.beta0 > 0.0 && self.mu0.is_finite() {
            Ok(())
        } else {
            Err(AgentError::Config(format!("ts needs positive hyperparameters, got {self:?}")))
        }
    }
}

/// Normal-Inverse-Gamma posterior of one arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nig {
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Nig {
    /// Conjugate update; every right-hand side uses the pre-update values.
    pub fn update(self, r: f64) -> Self {
        let Nig { mu, lambda, alpha, beta } = self;
        Nig {
            mu: (lambda * mu + r) / (lambda + 1.0),
            lambda: lambda + 1.0,
            alpha: alpha + 0.5,
            beta: beta + lambda * (r - mu).powi(2) / (2.0 * (lambda + 1.0)),
        }
    }

    pub fn sample_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let precision = Gamma::new(self.alpha, 1.0 / self.beta).expect("positive NIG").sample(rng);
        let var = 1.0 / precision;
        Normal::new(self.mu, (var / self.lambda).sqrt()).expect("finite NIG").sample(rng)
    }
}

#[derive(Clone, Debug)]
pub struct Thompson {
    pub cfg: TsConfig,
    arms: Vec<Nig>,
}

impl Thompson {
    pub fn new(cfg: TsConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self { cfg, arms: Vec::new() })
    }

    pub fn posteriors(&self) -> &[Nig] {
        &self.arms
    }

    fn reset(&mut self, n_arms: usize) {
        let c = self.cfg;
        self.arms = vec![Nig { mu: c.mu0, lambda: c.lambda0, alpha: c.alpha0, beta: c.beta0 }; n_arms];
    }
}

impl Agent for Thompson {
    fn label(&self) -> String {
        "ts".into()
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        self.reset(ctx.spec.n_arms);
        Ok(())
    }

    fn act(&mut self, _round: usize, rng: &mut SimRng) -> Result<usize, AgentError> {
        let draws: Vec<f64> = self.arms.iter().map(|a| a.sample_mean(rng)).collect();
        Ok(argmax(&draws))
    }

    fn observe(&mut self, _round: usize, arm: usize, reward: f64) -> Result<(), AgentError> {
        check_arm(arm, self.arms.len())?;
        self.arms[arm] = self.arms[arm].update(reward);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsConfig {
    pub epsilon: f64,
}

impl Default for EpsConfig {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct EpsGreedy {
    pub cfg: EpsConfig,
    stats: ArmStats,
}

impl EpsGreedy {
    pub fn new(cfg: EpsConfig) -> Result<Self, AgentError> {
        if !(0.0..=1.0).contains(&cfg.epsilon) {
            return Err(AgentError::Config(format!("epsilon {} outside [0, 1]", cfg.epsilon)));
        }
        Ok(Self { cfg, stats: ArmStats::default() })
    }
}

impl Agent for EpsGreedy {
    fn label(&self) -> String {
        format!("eps-greedy(eps={})", self.cfg.epsilon)
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        self.stats = ArmStats::new(ctx.spec.n_arms);
        Ok(())
    }

    fn act(&mut self, _round: usize, rng: &mut SimRng) -> Result<usize, AgentError> {
        if let Some(arm) = self.stats.first_unpulled() {
            return Ok(arm);
        }
        // ε = 0 never touches the generator.
        if self.cfg.epsilon > 0.0 && rng.random::<f64>() < self.cfg.epsilon {
            return Ok(rng.random_range(0..self.stats.counts.len()));
        }
        Ok(argmax(&self.stats.means))
    }

    fn observe(&mut self, _round: usize, arm: usize, reward: f64) -> Result<(), AgentError> {
        check_arm(arm, self.stats.counts.len())?;
        self.stats.push(arm, reward);
        Ok(())
    }
}

/// Replays recorded trajectories, checking every reward it is fed.
#[derive(Clone, Debug)]
pub struct Replay {
    trajectories: Vec<Trajectory>,
    current: Option<usize>,
}

impl Replay {
    /// `trajectories[i]` is replayed for trial index `i`.
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Self { trajectories, current: None }
    }

    fn trajectory(&self) -> Result<&Trajectory, AgentError> {
        let i = self.current.ok_or(AgentError::MissingTrial(usize::MAX))?;
        self.trajectories.get(i).ok_or(AgentError::MissingTrial(i))
    }

    fn step(&self, round: usize) -> Result<crate::domain::Step, AgentError> {
        let t = self.trajectory()?;
        round
            .checked_sub(1)
            .and_then(|i| t.steps.get(i))
            .copied()
            .ok_or(AgentError::ReplayRange { round, recorded: t.steps.len() })
    }
}

impl Agent for Replay {
    fn label(&self) -> String {
        "replay".into()
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        if ctx.trial_index >= self.trajectories.len() {
            return Err(AgentError::MissingTrial(ctx.trial_index));
        }
        self.current = Some(ctx.trial_index);
        Ok(())
    }

    fn act(&mut self, round: usize, _rng: &mut SimRng) -> Result<usize, AgentError> {
        Ok(self.step(round)?.choice)
    }

    fn observe(&mut self, round: usize, _arm: usize, reward: f64) -> Result<(), AgentError> {
        let s = self.step(round)?;
        if s.reward.to_bits() != reward.to_bits() {
            return Err(AgentError::ReplayIntegrity { round, expected: s.reward, found: reward });
        }
        Ok(())
    }
}

/// A synthetic subject choosing by a fitted choice model.
///
/// Softmax and probit subjects keep their own Kalman belief; QCARE subjects
/// keep empirical means and pull counts and seed them with one pull per arm.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub params: ChoiceParams,
    pub learner: LearnerConfig,
    belief: Option<BeliefState>,
    stats: ArmStats,
    prev: Option<usize>,
}

impl Simulated {
    pub fn new(params: ChoiceParams, learner: LearnerConfig) -> Result<Self, AgentError> {
        learner.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        // Validates finiteness.
        params.model().params(&params.to_vec())?;
        Ok(Self { params, learner, belief: None, stats: ArmStats::default(), prev: None })
    }

    pub fn belief(&self) -> Option<&BeliefState> {
        self.belief.as_ref()
    }
}

impl Agent for Simulated {
    fn label(&self) -> String {
        format!("simulated({})", self.params.model())
    }

    fn begin_trial(&mut self, ctx: &TrialContext<'_>) -> Result<(), AgentError> {
        let k = ctx.spec.n_arms;
        if self.params.model().two_armed_only() && k != 2 {
            return Err(ChoiceError::TwoArmedOnly(self.params.model()).into());
        }
        self.belief = Some(learner::init(&self.learner, k));
        self.stats = ArmStats::new(k);
        self.prev = None;
        Ok(())
    }

    fn act(&mut self, _round: usize, rng: &mut SimRng) -> Result<usize, AgentError> {
        if self.params.model() == Model::Qcare {
            if let Some(arm) = self.stats.first_unpulled() {
                return Ok(arm);
            }
            let ctx = Context::Stats { mu_hat: &self.stats.means, counts: &self.stats.counts };
            return Ok(choice::sample_choice(&self.params, ctx, rng)?);
        }
        let b = self.belief.as_ref().ok_or_else(|| AgentError::Failed("trial not started".into()))?;
        let sd = b.sd();
        let ctx = Context::Belief { q: &b.q, sd: &sd, prev: self.prev };
        Ok(choice::sample_choice(&self.params, ctx, rng)?)
    }

    fn observe(&mut self, _round: usize, arm: usize, reward: f64) -> Result<(), AgentError> {
        let b = self.belief.as_mut().ok_or_else(|| AgentError::Failed("trial not started".into()))?;
        learner::observe_in_place(b, arm, reward, &self.learner).map_err(|e| AgentError::Failed(e.to_string()))?;
        learner::drift_in_place(b, &self.learner);
        self.stats.push(arm, reward);
        self.prev = Some(arm);
        Ok(())
    }
}

/// Serializable description of a built-in agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Ucb {
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        prior_sd: Option<f64>,
    },
    Ts {
        #[serde(default)]
        config: Option<TsConfig>,
    },
    EpsGreedy {
        #[serde(default = "default_eps")]
        epsilon: f64,
    },
    Simulated {
        params: ChoiceParams,
        #[serde(default)]
        learner: Option<LearnerConfig>,
    },
}

fn default_eps() -> f64 {
    0.1
}

impl AgentSpec {
    pub fn ucb() -> Self {
        AgentSpec::Ucb { c: None, prior_sd: None }
    }

    pub fn ts() -> Self {
        AgentSpec::Ts { config: None }
    }

    pub fn eps(epsilon: f64) -> Self {
        AgentSpec::EpsGreedy { epsilon }
    }

    pub fn label(&self) -> String {
        match self {
            AgentSpec::Ucb { c, .. } => format!("ucb(c={})", c.unwrap_or(2.0)),
            AgentSpec::Ts { .. } => "ts".into(),
            AgentSpec::EpsGreedy { epsilon } => format!("eps-greedy(eps={epsilon})"),
            AgentSpec::Simulated { params, .. } => format!("simulated({})", params.model()),
        }
    }

    /// Build a fresh agent with the variant's defaults filled in.
    pub fn build(&self, spec: &EnvSpec) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Ucb { c, prior_sd } => {
                let mut cfg = UcbConfig::for_variant(spec.variant);
                if let Some(c) = c {
                    cfg.c = *c;
                }
                if let Some(sd) = prior_sd {
                    cfg.prior_sd = *sd;
                }
                Box::new(Ucb::new(cfg)?)
            }
            AgentSpec::Ts { config } => {
                Box::new(Thompson::new(config.unwrap_or_else(|| TsConfig::for_variant(spec.variant)))?)
            }
            AgentSpec::EpsGreedy { epsilon } => Box::new(EpsGreedy::new(EpsConfig { epsilon: *epsilon })?),
            AgentSpec::Simulated { params, learner } => Box::new(Simulated::new(
                *params,
                learner.clone().unwrap_or_else(|| LearnerConfig::for_spec(spec)),
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ctx(spec: &EnvSpec) -> TrialContext<'_> {
        TrialContext { spec, subject_id: "s", trial_index: 0, game: 1 }
    }

    #[test]
    fn f_hand_value() {
        assert_abs_diff_eq!(ucb_f(2), 1.9609, epsilon = 1e-4);
        assert_eq!(ucb_f(1), 1.0);
    }

    #[test]
    fn ucb_warm_phase_in_order() {
        let spec = EnvSpec::restless4();
        let mut a = Ucb::new(UcbConfig::for_variant(spec.variant)).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        let mut rng = rng::stream(0, &[]);
        for t in 1..=4 {
            let arm = a.act(t, &mut rng).unwrap();
            assert_eq!(arm, t - 1);
            a.observe(t, arm, 50.0).unwrap();
        }
        // Identical statistics everywhere: tie goes to arm 0.
        assert_eq!(a.act(5, &mut rng).unwrap(), 0);
    }

    #[test]
    fn ucb_uses_prior_sd_below_two_samples() {
        let spec = EnvSpec::stationary2();
        let mut a = Ucb::new(UcbConfig::for_variant(spec.variant)).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        a.observe(1, 0, 1.0).unwrap();
        a.observe(2, 1, 0.0).unwrap();
        a.observe(3, 1, 2.0).unwrap();
        // Arm 0: mean 1, sd √10, n 1. Arm 1: mean 1, sample sd √2, n 2.
        let i0 = ucb_index(1.0, 10f64.sqrt(), 1, 4, 2.0);
        let i1 = ucb_index(1.0, 2f64.sqrt(), 2, 4, 2.0);
        assert!(i0 > i1);
        assert_eq!(a.choose(4), 0);
        assert_abs_diff_eq!(a.stats().sample_sd(1).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn nig_hand_update() {
        let n = Nig { mu: 0.0, lambda: 1.0, alpha: 1.0, beta: 1.0 }.update(2.0);
        assert_eq!(n, Nig { mu: 1.0, lambda: 2.0, alpha: 1.5, beta: 2.0 });
    }

    #[test]
    fn ts_symmetric_prior_is_exchangeable() {
        let spec = EnvSpec::restless4();
        let mut a = Thompson::new(TsConfig::for_variant(spec.variant)).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        assert_eq!(a.posteriors()[0].mu, 50.0);
        let mut rng = rng::stream(5, &[]);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[a.act(1, &mut rng).unwrap()] += 1;
        }
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn eps_zero_is_greedy_and_draws_nothing() {
        let spec = EnvSpec::stationary2();
        let mut a = EpsGreedy::new(EpsConfig { epsilon: 0.0 }).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        let mut rng = rng::stream(3, &[]);
        let untouched = rng.clone();
        a.observe(1, 0, -1.0).unwrap();
        a.observe(2, 1, 4.0).unwrap();
        for t in 3..=10 {
            assert_eq!(a.act(t, &mut rng).unwrap(), 1);
        }
        assert_eq!(rng, untouched);
    }

    #[test]
    fn eps_one_is_uniform() {
        let spec = EnvSpec::restless4();
        let mut a = EpsGreedy::new(EpsConfig { epsilon: 1.0 }).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        for k in 0..4 {
            a.observe(k + 1, k, k as f64 * 10.0).unwrap();
        }
        let mut rng = rng::stream(8, &[]);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[a.act(5, &mut rng).unwrap()] += 1;
        }
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * se, "{counts:?}");
        }
        assert!(EpsGreedy::new(EpsConfig { epsilon: 1.5 }).is_err());
    }

    #[test]
    fn replay_checks_rewards_and_range() {
        let spec = EnvSpec::stationary2();
        let t = Trajectory {
            subject_id: "s".into(),
            trial_index: 0,
            env: crate::domain::EnvRef::TrueMeans(vec![0.0, 1.0]),
            steps: vec![
                crate::domain::Step { round: 1, choice: 1, reward: 3.0 },
                crate::domain::Step { round: 2, choice: 0, reward: -2.0 },
            ],
        };
        let mut a = Replay::new(vec![t]);
        a.begin_trial(&ctx(&spec)).unwrap();
        let mut rng = rng::stream(0, &[]);
        assert_eq!(a.act(1, &mut rng).unwrap(), 1);
        a.observe(1, 1, 3.0).unwrap();
        assert_eq!(a.act(2, &mut rng).unwrap(), 0);
        assert!(matches!(a.observe(2, 0, -1.0), Err(AgentError::ReplayIntegrity { round: 2, .. })));
        assert!(matches!(a.act(3, &mut rng), Err(AgentError::ReplayRange { round: 3, .. })));
    }

    #[test]
    fn simulated_zero_beta_is_uniform() {
        let spec = EnvSpec::stationary2();
        let mut a = Simulated::new(ChoiceParams::Sm1 { beta: 0.0 }, LearnerConfig::stationary2()).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        let mut rng = rng::stream(9, &[]);
        let n = 10_000;
        let mut zeros = 0;
        for t in 1..=n {
            let arm = a.act(t, &mut rng).unwrap();
            zeros += (arm == 0) as usize;
            a.observe(t, arm, if arm == 0 { 5.0 } else { -5.0 }).unwrap();
        }
        let se = (0.25 / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn qcare_subject_seeds_each_arm() {
        let spec = EnvSpec::stationary2();
        let mut a = Simulated::new(ChoiceParams::Qcare { alpha: 0.5 }, LearnerConfig::stationary2()).unwrap();
        a.begin_trial(&ctx(&spec)).unwrap();
        let mut rng = rng::stream(1, &[]);
        assert_eq!(a.act(1, &mut rng).unwrap(), 0);
        a.observe(1, 0, 1.0).unwrap();
        assert_eq!(a.act(2, &mut rng).unwrap(), 1);
        let spec4 = EnvSpec::restless4();
        assert!(a.begin_trial(&ctx(&spec4)).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = AgentSpec::Simulated { params: ChoiceParams::Sm3 { beta: 0.1, phi: 0.2, rho: 3.0 }, learner: None };
        let back: AgentSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
        let u: AgentSpec = serde_json::from_str(r#"{"kind":"ucb","c":4}"#).unwrap();
        assert_eq!(u, AgentSpec::Ucb { c: Some(4.0), prior_sd: None });
    }

    proptest! {
        #[test]
        fn ucb_index_monotone(mean in -50.0f64..50.0, sd in 0.1f64..10.0, n in 1usize..100, t in 2usize..300) {
            prop_assert!(ucb_index(mean, sd * 1.1, n, t, 2.0) > ucb_index(mean, sd, n, t, 2.0));
            prop_assert!(ucb_index(mean, sd, n + 1, t, 2.0) < ucb_index(mean, sd, n, t, 2.0));
        }

        #[test]
        fn nig_order_invariant(mut rewards in prop::collection::vec(-20.0f64..20.0, 1..12), seed in any::<u64>()) {
            let start = Nig { mu: 0.0, lambda: 1.0, alpha: 1.0, beta: 1.0 };
            let a = rewards.iter().fold(start, |n, r| n.update(*r));
            let mut rng = rng::stream(seed, &[]);
            use rand::seq::SliceRandom;
            rewards.shuffle(&mut rng);
            let b = rewards.iter().fold(start, |n, r| n.update(*r));
            prop_assert!((a.mu - b.mu).abs() < 1e-9);
            prop_assert!((a.beta - b.beta).abs() < 1e-7 * a.beta.max(1.0));
            prop_assert_eq!(a.lambda, b.lambda);
            prop_assert_eq!(a.alpha, b.alpha);
        }

        #[test]
        fn welford_matches_two_pass(xs in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let mut s = ArmStats::new(1);
            for x in &xs { s.push(0, *x); }
            let m = crate::special::mean(&xs);
            prop_assert!((s.means[0] - m).abs() < 1e-9);
            let sd = crate::special::sample_var(&xs).sqrt();
            prop_assert!((s.sample_sd(0).unwrap() - sd).abs() < 1e-8);
        }
    }
}
