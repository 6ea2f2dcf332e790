//! Vocabulary types shared by every module.
//!
//! Arms are 0-indexed everywhere inside the crate. The external labelling
//! (1-based for the two-armed task, 0-based for the four-armed task) is applied
//! only at I/O boundaries through [`EnvSpec::arm_label`] and
//! [`EnvSpec::arm_from_label`].

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Stationary2,
    Restless4,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Stationary2 => "stationary2",
            Variant::Restless4 => "restless4",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stationary2" => Ok(Variant::Stationary2),
            "restless4" => Ok(Variant::Restless4),
            other => Err(DomainError::UnknownVariant(other.to_string())),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("unknown environment variant `{0}`")]
    UnknownVariant(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
}

/// Parameters of a bandit environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub variant: Variant,
    pub n_arms: usize,
    pub horizon: usize,
    pub games_per_session: usize,
    /// Variance of the prior the stationary arm means are drawn from.
    pub mean_prior_variance: f64,
    /// σ₀²: variance of a reward around its arm mean.
    pub reward_variance: f64,
    /// λ of the decaying random walk.
    pub decay: f64,
    /// θ of the decaying random walk.
    pub long_run_mean: f64,
    /// σ_d²: variance of the per-round diffusion noise.
    pub diffusion_variance: f64,
    pub initial_means: Vec<f64>,
    pub integer_rewards: bool,
}

impl EnvSpec {
    /// Stationary two-armed task: 20 games of 10 rounds, means ~ N(0, 100), σ₀² = 10.
    pub fn stationary2() -> Self {
        Self {
            variant: Variant::Stationary2,
            n_arms: 2,
            horizon: 10,
            games_per_session: 20,
            mean_prior_variance: 100.0,
            reward_variance: 10.0,
            decay: 1.0,
            long_run_mean: 0.0,
            diffusion_variance: 0.0,
            initial_means: Vec::new(),
            integer_rewards: true,
        }
    }

    /// Restless four-armed task: one 300-round game on a decaying random walk.
    pub fn restless4() -> Self {
        Self {
            variant: Variant::Restless4,
            n_arms: 4,
            horizon: 300,
            games_per_session: 1,
            mean_prior_variance: 0.0,
            reward_variance: 4.0,
            decay: 0.9836,
            long_run_mean: 50.0,
            diffusion_variance: 2.8,
            initial_means: vec![20.0, 40.0, 60.0, 80.0],
            integer_rewards: true,
        }
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::Stationary2 => Self::stationary2(),
            Variant::Restless4 => Self::restless4(),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: String| Err(DomainError::InvalidSpec(msg));
        let expected_arms = match self.variant {
            Variant::Stationary2 => 2,
            Variant::Restless4 => 4,
        };
        if self.n_arms != expected_arms {
            return bad(format!("{} requires {expected_arms} arms, got {}", self.variant, self.n_arms));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if self.games_per_session < 1 {
            return bad("games_per_session must be at least 1".into());
        }
        for (name, v) in [
            ("mean_prior_variance", self.mean_prior_variance),
            ("reward_variance", self.reward_variance),
            ("diffusion_variance", self.diffusion_variance),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if !self.long_run_mean.is_finite() {
            return bad("long_run_mean must be finite".into());
        }
        if self.variant == Variant::Restless4 {
            if self.initial_means.len() != self.n_arms {
                return bad(format!(
                    "initial_means has {} entries for {} arms",
                    self.initial_means.len(),
                    self.n_arms
                ));
            }
            if self.initial_means.iter().any(|m| !m.is_finite()) {
                return bad("initial_means must be finite".into());
            }
        }
        Ok(())
    }

    /// External label shown to participants for an internal arm index.
    pub fn arm_label(&self, arm: usize) -> i64 {
        match self.variant {
            Variant::Stationary2 => arm as i64 + 1,
            Variant::Restless4 => arm as i64,
        }
    }

    pub fn arm_from_label(&self, label: i64) -> Option<usize> {
        let arm = match self.variant {
            Variant::Stationary2 => label - 1,
            Variant::Restless4 => label,
        };
        (0..self.n_arms as i64).contains(&arm).then_some(arm as usize)
    }

    pub fn arm_labels(&self) -> Vec<i64> {
        (0..self.n_arms).map(|a| self.arm_label(a)).collect()
    }
}

/// Pre-generated latent means and realized rewards of one restless reward group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    pub group_id: u32,
    /// `means[arm][round - 1]`
    pub means: Vec<Vec<f64>>,
    /// `rewards[arm][round - 1]`
    pub rewards: Vec<Vec<f64>>,
    pub seed: u64,
}

impl RewardGroup {
    pub fn n_arms(&self) -> usize {
        self.rewards.len()
    }

    pub fn horizon(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    /// Reward of `arm` at 1-based `round`.
    pub fn reward(&self, arm: usize, round: usize) -> Option<f64> {
        self.rewards.get(arm)?.get(round.checked_sub(1)?).copied()
    }

    pub fn best_reward(&self, round: usize) -> Option<f64> {
        let idx = round.checked_sub(1)?;
        self.rewards
            .iter()
            .map(|row| row.get(idx).copied())
            .try_fold(f64::NEG_INFINITY, |acc, v| v.map(|v| acc.max(v)))
    }
}

/// Environment reference stored with a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvRef {
    TrueMeans(Vec<f64>),
    Group(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based round.
    pub round: usize,
    /// 0-based arm.
    pub choice: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub subject_id: String,
    pub trial_index: usize,
    pub env: EnvRef,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn choices(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.choice)
    }

    pub fn true_means(&self) -> Option<&[f64]> {
        match &self.env {
            EnvRef::TrueMeans(m) => Some(m),
            EnvRef::Group(_) => None,
        }
    }

    pub fn group_id(&self) -> Option<u32> {
        match self.env {
            EnvRef::Group(g) => Some(g),
            EnvRef::TrueMeans(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub original_horizon: usize,
    pub truncated_to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub env_spec: EnvSpec,
    pub agent_label: String,
    pub trajectories: Vec<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Truncation>,
}

impl Dataset {
    pub fn new(env_spec: EnvSpec, agent_label: impl Into<String>, trajectories: Vec<Trajectory>) -> Self {
        Self {
            env_spec,
            agent_label: agent_label.into(),
            trajectories,
            truncation: None,
        }
    }

    /// Subject id → positions of that subject's trajectories, in file order.
    pub fn subjects(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.trajectories.iter().enumerate() {
            map.entry(t.subject_id.as_str()).or_default().push(i);
        }
        map
    }

    pub fn n_choices(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    InvalidSpec(String),
    EmptySubjectId,
    DuplicateTrial,
    ChoiceOutOfRange { choice: usize, n_arms: usize },
    RoundGap { expected: usize, found: Option<usize> },
    NonFiniteReward,
    TrueMeansShape { expected: usize, found: usize },
    MissingTrueMeans,
    MissingGroup,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::InvalidSpec(m) => write!(f, "invalid env spec: {m}"),
            Rule::EmptySubjectId => f.write_str("empty subject id"),
            Rule::DuplicateTrial => f.write_str("duplicate (subject, trial) pair"),
            Rule::ChoiceOutOfRange { choice, n_arms } => {
                write!(f, "choice out of range: arm {choice} with {n_arms} arms")
            }
            Rule::RoundGap { expected, found } => match found {
                Some(r) => write!(f, "round gap: expected round {expected}, found {r}"),
                None => write!(f, "round gap: expected round {expected}, trajectory ended"),
            },
            Rule::NonFiniteReward => f.write_str("non-finite reward"),
            Rule::TrueMeansShape { expected, found } => {
                write!(f, "expected {expected} true means, found {found}")
            }
            Rule::MissingTrueMeans => f.write_str("stationary trajectory without true means"),
            Rule::MissingGroup => f.write_str("restless trajectory without reward group"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the trajectory in the dataset (absent for dataset-level rules).
    pub trajectory: Option<usize>,
    pub round: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.trajectory, self.round) {
            (Some(t), Some(r)) => write!(f, "trajectory {t}, round {r}: {}", self.rule),
            (Some(t), None) => write!(f, "trajectory {t}: {}", self.rule),
            _ => write!(f, "dataset: {}", self.rule),
        }
    }
}

/// Check every trajectory/dataset invariant. Returns an empty list iff the
/// dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Err(DomainError::InvalidSpec(m)) = d.env_spec.validate() {
        out.push(Violation { trajectory: None, round: None, rule: Rule::InvalidSpec(m) });
        return out;
    }
    let spec = &d.env_spec;
    let mut seen = std::collections::HashSet::new();
    for (i, t) in d.trajectories.iter().enumerate() {
        let v = |round, rule| Violation { trajectory: Some(i), round, rule };
        if t.subject_id.is_empty() {
            out.push(v(None, Rule::EmptySubjectId));
        }
        if !seen.insert((t.subject_id.as_str(), t.trial_index)) {
            out.push(v(None, Rule::DuplicateTrial));
        }
        match (&t.env, spec.variant) {
            (EnvRef::TrueMeans(m), Variant::Stationary2) => {
                if m.len() != spec.n_arms {
                    out.push(v(None, Rule::TrueMeansShape { expected: spec.n_arms, found: m.len() }));
                }
            }
            (EnvRef::Group(_), Variant::Stationary2) => out.push(v(None, Rule::MissingTrueMeans)),
            (EnvRef::TrueMeans(_), Variant::Restless4) => out.push(v(None, Rule::MissingGroup)),
            (EnvRef::Group(_), Variant::Restless4) => {}
        }
        for (k, s) in t.steps.iter().enumerate() {
            if s.round != k + 1 {
                out.push(v(Some(s.round), Rule::RoundGap { expected: k + 1, found: Some(s.round) }));
                break;
            }
        }
        if t.steps.len() < spec.horizon && t.steps.iter().enumerate().all(|(k, s)| s.round == k + 1) {
            out.push(v(
                Some(t.steps.len() + 1),
                Rule::RoundGap { expected: t.steps.len() + 1, found: None },
            ));
        } else if t.steps.len() > spec.horizon {
            out.push(v(
                Some(spec.horizon + 1),
                Rule::RoundGap { expected: spec.horizon, found: Some(t.steps.len()) },
            ));
        }
        for s in &t.steps {
            if s.choice >= spec.n_arms {
                out.push(v(Some(s.round), Rule::ChoiceOutOfRange { choice: s.choice, n_arms: spec.n_arms }));
            }
            if !s.reward.is_finite() {
                out.push(v(Some(s.round), Rule::NonFiniteReward));
            }
        }
    }
    out
}
