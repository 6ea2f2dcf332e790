//! Kalman-filter belief learner.
//!
//! Beliefs about each arm's mean are Gaussian with mean `q` and variance
//! `s_sq`. Within a round the order is choose → [`observe`] → [`drift`], so the
//! belief used at round t + 1 has drifted exactly once per elapsed round.

use crate::domain::{EnvSpec, Trajectory, Variant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Assumed observation noise variance σ̂₀².
    pub obs_variance: f64,
    /// Assumed diffusion variance σ̂_d².
    pub diffusion_variance: f64,
    /// Assumed decay λ̂.
    pub decay: f64,
    /// Assumed long-run mean θ̂.
    pub long_run_mean: f64,
    /// Initial mean Q(1) of every arm.
    pub q1: f64,
    /// Initial variance S(1)² of every arm.
    pub s1_sq: f64,
}

impl LearnerConfig {
    pub fn stationary2() -> Self {
        Self { obs_variance: 10.0, diffusion_variance: 0.0, decay: 1.0, long_run_mean: 0.0, q1: 0.0, s1_sq: 100.0 }
    }

    /// Restless preset. The initial SD of 4 is a default, not a fitted value.
    pub fn restless4() -> Self {
        Self { obs_variance: 4.0, diffusion_variance: 2.8, decay: 0.9836, long_run_mean: 50.0, q1: 50.0, s1_sq: 16.0 }
    }

    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Stationary2 => Self::stationary2(),
            Variant::Restless4 => Self::restless4(),
        }
    }

    pub fn for_spec(spec: &EnvSpec) -> Self {
        Self::for_variant(spec.variant)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let ok = self.obs_variance >= 0.0
            && self.diffusion_variance >= 0.0
            && self.s1_sq >= 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.q1.is_finite()
            && self.long_run_mean.is_finite()
            && self.obs_variance.is_finite()
            && self.diffusion_variance.is_finite()
            && self.s1_sq.is_finite();
        if ok {
            Ok(())
        } else {
            Err(LearnerError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub q: Vec<f64>,
    pub s_sq: Vec<f64>,
    /// 1-based round the belief applies to.
    pub round: usize,
}

impl BeliefState {
    pub fn n_arms(&self) -> usize {
        self.q.len()
    }

    /// Posterior standard deviations.
    pub fn sd(&self) -> Vec<f64> {
        self.s_sq.iter().map(|v| v.sqrt()).collect()
    }
}

pub fn init(cfg: &LearnerConfig, n_arms: usize) -> BeliefState {
    BeliefState { q: vec![cfg.q1; n_arms], s_sq: vec![cfg.s1_sq; n_arms], round: 1 }
}

/// Kalman gain for an arm with prior variance `s_sq`.
pub fn kalman_gain(s_sq: f64, obs_variance: f64) -> f64 {
    let denom = s_sq + obs_variance;
    if denom == 0.0 {
        1.0
    } else {
        s_sq / denom
    }
}

/// Posterior update of the chosen arm; all other arms keep their prior.
pub fn observe(state: &BeliefState, arm: usize, reward: f64, cfg: &LearnerConfig) -> Result<BeliefState, LearnerError> {
    let mut next = state.clone();
    observe_in_place(&mut next, arm, reward, cfg)?;
    Ok(next)
}

pub fn observe_in_place(state: &mut BeliefState, arm: usize, reward: f64, cfg: &LearnerConfig) -> Result<(), LearnerError> {
    let n_arms = state.n_arms();
    if arm >= n_arms {
        return Err(LearnerError::ArmOutOfRange { arm, n_arms });
    }
    let k = kalman_gain(state.s_sq[arm], cfg.obs_variance);
    state.q[arm] += k * (reward - state.q[arm]);
    state.s_sq[arm] *= 1.0 - k;
    Ok(())
}

/// Between-round prediction step applied to every arm.
pub fn drift(state: &BeliefState, cfg: &LearnerConfig) -> BeliefState {
    let mut next = state.clone();
    drift_in_place(&mut next, cfg);
    next
}

pub fn drift_in_place(state: &mut BeliefState, cfg: &LearnerConfig) {
    let lam = cfg.decay;
    for q in &mut state.q {
        *q = lam * *q + (1.0 - lam) * cfg.long_run_mean;
    }
    for s in &mut state.s_sq {
        *s = lam * lam * *s + cfg.diffusion_variance;
    }
    state.round += 1;
}

/// Pre-choice belief at every round of the trajectory.
pub fn belief_trace(traj: &Trajectory, n_arms: usize, cfg: &LearnerConfig) -> Result<Vec<BeliefState>, LearnerError> {
    cfg.validate()?;
    let mut state = init(cfg, n_arms);
    let mut out = Vec::with_capacity(traj.steps.len());
    for (k, step) in traj.steps.iter().enumerate() {
        if step.round != k + 1 {
            return Err(LearnerError::InvalidTrajectory(format!(
                "expected round {}, found {}",
                k + 1,
                step.round
            )));
        }
        out.push(state.clone());
        observe_in_place(&mut state, step.choice, step.reward, cfg)?;
        drift_in_place(&mut state, cfg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EnvRef, Step};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn presets_initialise_all_arms_identically() {
        let s = init(&LearnerConfig::stationary2(), 2);
        assert_eq!(s.q, vec![0.0, 0.0]);
        assert_eq!(s.s_sq, vec![100.0, 100.0]);
        let r = init(&LearnerConfig::restless4(), 4);
        assert_eq!(r.q, vec![50.0; 4]);
        assert_eq!(r.s_sq, vec![16.0; 4]);
        assert_eq!(r.round, 1);
    }

    #[test]
    fn first_stationary_gain() {
        let g = kalman_gain(100.0, 10.0);
        assert_abs_diff_eq!(g, 10.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn restless_observe_then_drift_hand_values() {
        let cfg = LearnerConfig::restless4();
        let s = init(&cfg, 4);
        let post = observe(&s, 2, 60.0, &cfg).unwrap();
        assert_abs_diff_eq!(post.q[2], 58.0, epsilon = 1e-12);
        assert_abs_diff_eq!(post.s_sq[2], 3.2, epsilon = 1e-12);
        assert_eq!(post.q[0], 50.0);
        assert_eq!(post.s_sq[1], 16.0);
        let next = drift(&post, &cfg);
        assert_abs_diff_eq!(next.q[2], 57.8688, epsilon = 1e-10);
        assert_abs_diff_eq!(next.s_sq[2], 0.9836f64.powi(2) * 3.2 + 2.8, epsilon = 1e-12);
        assert_abs_diff_eq!(next.s_sq[2], 5.8959, epsilon = 1e-4);
        // Unchosen arm sits at θ̂ so its mean is a fixed point.
        assert_eq!(next.q[0], 50.0);
        assert_eq!(next.round, 2);
    }

    #[test]
    fn noiseless_observation_jumps_to_reward() {
        let mut cfg = LearnerConfig::stationary2();
        cfg.obs_variance = 0.0;
        let s = observe(&init(&cfg, 2), 0, 7.5, &cfg).unwrap();
        assert_eq!(s.q[0], 7.5);
        assert_eq!(s.s_sq[0], 0.0);
    }

    #[test]
    fn stationary_drift_is_identity() {
        let cfg = LearnerConfig::stationary2();
        let s = BeliefState { q: vec![3.0, -1.0], s_sq: vec![9.0, 100.0], round: 4 };
        let d = drift(&s, &cfg);
        assert_eq!(d.q, s.q);
        assert_eq!(d.s_sq, s.s_sq);
        assert_eq!(d.round, 5);
    }

    #[test]
    fn observe_rejects_bad_arm() {
        let cfg = LearnerConfig::stationary2();
        assert!(observe(&init(&cfg, 2), 2, 1.0, &cfg).is_err());
    }

    fn traj(steps: &[(usize, f64)]) -> Trajectory {
        Trajectory {
            subject_id: "s".into(),
            trial_index: 0,
            env: EnvRef::Group(1),
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &(c, r))| Step { round: i + 1, choice: c, reward: r })
                .collect(),
        }
    }

    #[test]
    fn trace_composes_hand_examples() {
        let cfg = LearnerConfig::restless4();
        let tr = belief_trace(&traj(&[(2, 60.0), (2, 50.0)]), 4, &cfg).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[0], init(&cfg, 4));
        assert_abs_diff_eq!(tr[1].q[2], 57.8688, epsilon = 1e-10);
        assert_abs_diff_eq!(tr[1].s_sq[2], 0.9836f64.powi(2) * 3.2 + 2.8, epsilon = 1e-12);
    }

    #[test]
    fn unchosen_stationary_arm_stays_at_prior() {
        let cfg = LearnerConfig::stationary2();
        let steps: Vec<(usize, f64)> = (0..10).map(|i| (0, i as f64)).collect();
        let tr = belief_trace(&traj(&steps), 2, &cfg).unwrap();
        assert!(tr.iter().all(|b| b.q[1] == 0.0 && b.s_sq[1] == 100.0));
    }

    #[test]
    fn uncertainty_converges_to_drift_fixed_point() {
        let cfg = LearnerConfig::restless4();
        let mut s = init(&cfg, 4);
        for _ in 0..2000 {
            drift_in_place(&mut s, &cfg);
        }
        let fixed = cfg.diffusion_variance / (1.0 - cfg.decay * cfg.decay);
        assert!((fixed - 86.07).abs() < 0.01);
        for v in &s.s_sq {
            assert!((v - fixed).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn trace_rejects_round_gap() {
        let mut t = traj(&[(0, 1.0), (1, 2.0)]);
        t.steps[1].round = 3;
        assert!(belief_trace(&t, 2, &LearnerConfig::stationary2()).is_err());
    }

    proptest! {
        #[test]
        fn variance_closed_form_without_drift(rewards in prop::collection::vec(-30.0f64..30.0, 1..=10)) {
            let cfg = LearnerConfig::stationary2();
            let mut s = init(&cfg, 2);
            let mut last = s.s_sq[0];
            for (n, r) in rewards.iter().enumerate() {
                observe_in_place(&mut s, 0, *r, &cfg).unwrap();
                drift_in_place(&mut s, &cfg);
                let n = (n + 1) as f64;
                let closed = cfg.s1_sq * cfg.obs_variance / (cfg.obs_variance + n * cfg.s1_sq);
                prop_assert!((s.s_sq[0] - closed).abs() < 1e-9);
                prop_assert!(s.s_sq[0] <= last);
                last = s.s_sq[0];
            }
        }

        #[test]
        fn observe_touches_one_arm(arm in 0usize..4, r in -100.0f64..100.0) {
            let cfg = LearnerConfig::restless4();
            let s = init(&cfg, 4);
            let p = observe(&s, arm, r, &cfg).unwrap();
            for k in 0..4 {
                if k != arm {
                    prop_assert_eq!(p.q[k], s.q[k]);
                    prop_assert_eq!(p.s_sq[k], s.s_sq[k]);
                }
            }
            prop_assert!(p.s_sq.iter().all(|v| *v >= 0.0));
        }
    }
}
