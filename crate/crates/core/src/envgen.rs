//! Seeded generation of stationary games and restless reward groups.

use crate::domain::{EnvSpec, RewardGroup, Variant};
use crate::rng::{self, tags, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("operation requires a {expected} spec, got {found}")]
    WrongVariant { expected: Variant, found: Variant },
    #[error(transparent)]
    Spec(#[from] crate::domain::DomainError),
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("round {round} out of range 1..={horizon}")]
    RoundOutOfRange { round: usize, horizon: usize },
}

fn require(spec: &EnvSpec, variant: Variant) -> Result<(), EnvError> {
    spec.validate()?;
    if spec.variant != variant {
        return Err(EnvError::WrongVariant { expected: variant, found: spec.variant });
    }
    Ok(())
}

fn finish_reward(raw: f64, integer: bool) -> f64 {
    if integer {
        // f64::round rounds half away from zero.
        raw.round()
    } else {
        raw
    }
}

/// One stationary game: fixed arm means plus the seed of its reward streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryGame {
    pub true_means: Vec<f64>,
    pub seed: u64,
}

impl StationaryGame {
    /// Regenerate a game from its own seed.
    pub fn from_seed(spec: &EnvSpec, seed: u64) -> Self {
        let sd = spec.mean_prior_variance.sqrt();
        let true_means = (0..spec.n_arms)
            .map(|arm| {
                let z: f64 = StandardNormal.sample(&mut rng::stream(seed, &[tags::STATIONARY_MEANS, arm as u64]));
                sd * z
            })
            .collect();
        Self { true_means, seed }
    }
}

/// Draw `n_games` independent games with arm means ~ N(0, mean_prior_variance).
pub fn gen_stationary_games(spec: &EnvSpec, n_games: usize, seed: u64) -> Result<Vec<StationaryGame>, EnvError> {
    require(spec, Variant::Stationary2)?;
    Ok((0..n_games)
        .map(|g| StationaryGame::from_seed(spec, rng::derive(seed, &[tags::STATIONARY_GAME, g as u64])))
        .collect())
}

/// Per-arm, per-round diffusion draws ω of a group (`omega[arm][t - 1]` drives
/// the step from round t to t + 1).
pub fn diffusion_draws(spec: &EnvSpec, group_id: u32, seed: u64) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, spec.diffusion_variance.sqrt()).expect("validated variance");
    (0..spec.n_arms)
        .map(|arm| {
            let mut rng = rng::stream(seed, &[tags::GROUP_NOISE, group_id as u64, arm as u64]);
            (1..spec.horizon).map(|_| noise.sample(&mut rng)).collect()
        })
        .collect()
}

/// Generate one restless reward group: latent means follow
/// `μ[t+1] = λ·μ[t] + (1 − λ)·θ + ω[t]` from the spec's initial means and
/// rewards are `N(μ[t], σ₀²)`, rounded if the spec asks for integer rewards.
pub fn gen_reward_group(spec: &EnvSpec, group_id: u32, seed: u64) -> Result<RewardGroup, EnvError> {
    require(spec, Variant::Restless4)?;
    let omega = diffusion_draws(spec, group_id, seed);
    let reward_sd = spec.reward_variance.sqrt();
    let mut means = Vec::with_capacity(spec.n_arms);
    let mut rewards = Vec::with_capacity(spec.n_arms);
    for arm in 0..spec.n_arms {
        let mut mu = Vec::with_capacity(spec.horizon);
        mu.push(spec.initial_means[arm]);
        for t in 1..spec.horizon {
            let prev = mu[t - 1];
            mu.push(spec.decay * prev + (1.0 - spec.decay) * spec.long_run_mean + omega[arm][t - 1]);
        }
        let mut rng = rng::stream(seed, &[tags::GROUP_REWARD, group_id as u64, arm as u64]);
        let r = mu
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                finish_reward(m + reward_sd * z, spec.integer_rewards)
            })
            .collect();
        means.push(mu);
        rewards.push(r);
    }
    Ok(RewardGroup { group_id, means, rewards, seed })
}

/// The default restless groups: ids 1, 2, 3 generated with seeds 1, 2, 3.
pub fn default_groups(spec: &EnvSpec) -> Result<Vec<RewardGroup>, EnvError> {
    (1..=3).map(|g| gen_reward_group(spec, g, g as u64)).collect()
}

/// A live environment for one trial.
#[derive(Clone, Debug)]
pub enum EnvInstance {
    Stationary {
        game: StationaryGame,
        reward_sd: f64,
        integer: bool,
        horizon: usize,
    },
    Restless(Arc<RewardGroup>),
}

impl EnvInstance {
    pub fn stationary(spec: &EnvSpec, game: StationaryGame) -> Self {
        EnvInstance::Stationary {
            game,
            reward_sd: spec.reward_variance.sqrt(),
            integer: spec.integer_rewards,
            horizon: spec.horizon,
        }
    }

    pub fn n_arms(&self) -> usize {
        match self {
            EnvInstance::Stationary { game, .. } => game.true_means.len(),
            EnvInstance::Restless(g) => g.n_arms(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvInstance::Stationary { horizon, .. } => *horizon,
            EnvInstance::Restless(g) => g.horizon(),
        }
    }

    fn check(&self, arm: usize, round: usize) -> Result<(), EnvError> {
        let n_arms = self.n_arms();
        if arm >= n_arms {
            return Err(EnvError::ArmOutOfRange { arm, n_arms });
        }
        let horizon = self.horizon();
        if round == 0 || round > horizon {
            return Err(EnvError::RoundOutOfRange { round, horizon });
        }
        Ok(())
    }

    /// Stationary: a fresh N(μ_arm, σ₀²) draw from `rng`. Restless: lookup of
    /// the pre-generated reward, `rng` untouched.
    pub fn sample_reward<R: Rng + ?Sized>(&self, arm: usize, round: usize, rng: &mut R) -> Result<f64, EnvError> {
        self.check(arm, round)?;
        match self {
            EnvInstance::Stationary { game, reward_sd, integer, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                Ok(finish_reward(game.true_means[arm] + reward_sd * z, *integer))
            }
            EnvInstance::Restless(g) => Ok(g.rewards[arm][round - 1]),
        }
    }

    /// Reward of `arm` at `round` with the draw keyed by (game seed, arm, round),
    /// so the value does not depend on which arms were pulled earlier.
    pub fn reward_at(&self, arm: usize, round: usize) -> Result<f64, EnvError> {
        let mut rng = self.reward_stream(arm, round);
        self.sample_reward(arm, round, &mut rng)
    }

    fn reward_stream(&self, arm: usize, round: usize) -> SimRng {
        match self {
            EnvInstance::Stationary { game, .. } => {
                rng::stream(game.seed, &[tags::STATIONARY_REWARD, arm as u64, round as u64])
            }
            EnvInstance::Restless(g) => rng::stream(g.seed, &[]),
        }
    }

    pub fn true_means(&self) -> Option<&[f64]> {
        match self {
            EnvInstance::Stationary { game, .. } => Some(&game.true_means),
            EnvInstance::Restless(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{mean, sample_var};
    use sha2::{Digest, Sha256};

    fn digest(g: &RewardGroup) -> String {
        let bytes = serde_json::to_vec(g).unwrap();
        hex::encode(Sha256::digest(&bytes))
    }

    #[test]
    fn stationary_generation_is_deterministic() {
        let spec = EnvSpec::stationary2();
        let a = gen_stationary_games(&spec, 20, 42).unwrap();
        let b = gen_stationary_games(&spec, 20, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_stationary_games(&spec, 20, 43).unwrap();
        assert_ne!(a, c);
        // Regeneration from the game's own seed.
        for g in &a {
            assert_eq!(&StationaryGame::from_seed(&spec, g.seed), g);
        }
    }

    #[test]
    fn stationary_means_match_prior_moments() {
        let spec = EnvSpec::stationary2();
        let games = gen_stationary_games(&spec, 5000, 9).unwrap();
        let mus: Vec<f64> = games.iter().flat_map(|g| g.true_means.clone()).collect();
        let n = mus.len() as f64;
        let m = mean(&mus);
        let v = sample_var(&mus);
        // SE of the mean: sqrt(100/n); SE of the variance: 100·sqrt(2/(n−1)).
        assert!(m.abs() < 3.0 * (100.0 / n).sqrt(), "mean {m}");
        assert!((v - 100.0).abs() < 3.0 * 100.0 * (2.0 / (n - 1.0)).sqrt(), "var {v}");
    }

    #[test]
    fn stationary_games_use_distinct_substreams() {
        let spec = EnvSpec::stationary2();
        let games = gen_stationary_games(&spec, 20, 1).unwrap();
        let seeds: std::collections::HashSet<u64> = games.iter().map(|g| g.seed).collect();
        assert_eq!(seeds.len(), 20);
        // Arms within a game are not copies of each other.
        assert!(games.iter().all(|g| g.true_means[0] != g.true_means[1]));
    }

    #[test]
    fn wrong_variant_rejected() {
        assert!(matches!(
            gen_stationary_games(&EnvSpec::restless4(), 1, 0),
            Err(EnvError::WrongVariant { .. })
        ));
        assert!(matches!(
            gen_reward_group(&EnvSpec::stationary2(), 1, 0),
            Err(EnvError::WrongVariant { .. })
        ));
        let mut bad = EnvSpec::stationary2();
        bad.reward_variance = f64::NAN;
        assert!(gen_stationary_games(&bad, 1, 0).is_err());
    }

    #[test]
    fn group_starts_at_initial_means() {
        let g = gen_reward_group(&EnvSpec::restless4(), 1, 1).unwrap();
        let firsts: Vec<f64> = g.means.iter().map(|m| m[0]).collect();
        assert_eq!(firsts, vec![20.0, 40.0, 60.0, 80.0]);
        assert_eq!(g.horizon(), 300);
        assert!(g.rewards.iter().flatten().all(|r| r.fract() == 0.0));
    }

    #[test]
    fn fixed_point_without_diffusion() {
        let mut spec = EnvSpec::restless4();
        spec.diffusion_variance = 0.0;
        spec.initial_means = vec![50.0; 4];
        let g = gen_reward_group(&spec, 1, 5).unwrap();
        assert!(g.means.iter().flatten().all(|&m| m == 50.0));
    }

    #[test]
    fn means_replay_recorded_noise_exactly() {
        let spec = EnvSpec::restless4();
        let g = gen_reward_group(&spec, 2, 17).unwrap();
        let omega = diffusion_draws(&spec, 2, 17);
        for arm in 0..4 {
            for t in 1..spec.horizon {
                let expected = spec.decay * g.means[arm][t - 1]
                    + (1.0 - spec.decay) * spec.long_run_mean
                    + omega[arm][t - 1];
                assert_eq!(g.means[arm][t].to_bits(), expected.to_bits());
            }
        }
    }

    #[test]
    fn group_generation_digest_is_stable() {
        let spec = EnvSpec::restless4();
        let a = gen_reward_group(&spec, 3, 3).unwrap();
        let b = gen_reward_group(&spec, 3, 3).unwrap();
        assert_eq!(digest(&a), digest(&b));
        assert_ne!(digest(&a), digest(&gen_reward_group(&spec, 3, 4).unwrap()));
    }

    #[test]
    fn stationary_variance_of_means_process() {
        // AR(1) oracle: stationary variance σ_d² / (1 − λ²) ≈ 86.07.
        let mut spec = EnvSpec::restless4();
        spec.horizon = 100_000;
        spec.initial_means = vec![50.0; 4];
        let g = gen_reward_group(&spec, 1, 11).unwrap();
        let target = 2.8 / (1.0 - 0.9836f64.powi(2));
        assert!((target - 86.07).abs() < 0.01, "{target}");
        let burn = 1000;
        let pooled: Vec<f64> = g.means.iter().flat_map(|m| m[burn..].to_vec()).collect();
        let v = sample_var(&pooled);
        assert!((v / target - 1.0).abs() < 0.05, "variance {v} vs {target}");
    }

    #[test]
    fn restless_sample_is_lookup() {
        let g = Arc::new(gen_reward_group(&EnvSpec::restless4(), 1, 1).unwrap());
        let env = EnvInstance::Restless(g.clone());
        let mut rng = rng::stream(0, &[]);
        for (arm, round) in [(0, 1), (3, 300), (2, 150)] {
            let a = env.sample_reward(arm, round, &mut rng).unwrap();
            let b = env.sample_reward(arm, round, &mut rng).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, g.rewards[arm][round - 1]);
        }
        assert!(env.sample_reward(4, 1, &mut rng).is_err());
        assert!(env.sample_reward(0, 301, &mut rng).is_err());
        assert!(env.sample_reward(0, 0, &mut rng).is_err());
    }

    #[test]
    fn stationary_reward_variance() {
        let mut spec = EnvSpec::stationary2();
        spec.integer_rewards = false;
        let env = EnvInstance::stationary(&spec, StationaryGame { true_means: vec![0.0, 0.0], seed: 3 });
        let mut rng = rng::stream(123, &[]);
        let draws: Vec<f64> = (0..10_000).map(|_| env.sample_reward(0, 1, &mut rng).unwrap()).collect();
        let v = sample_var(&draws);
        assert!((v / 10.0 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn keyed_rewards_are_reproducible() {
        let spec = EnvSpec::stationary2();
        let game = gen_stationary_games(&spec, 1, 5).unwrap().remove(0);
        let env = EnvInstance::stationary(&spec, game);
        assert_eq!(env.reward_at(1, 4).unwrap(), env.reward_at(1, 4).unwrap());
        assert!(env.reward_at(0, 11).is_err());
    }
}
