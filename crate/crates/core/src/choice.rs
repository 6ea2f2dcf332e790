//! Choice probabilities, log-likelihoods and samplers for the softmax family
//! (SM1–SM3), the two-armed probit model and QCARE.

use crate::domain::Trajectory;
use crate::learner::{self, LearnerConfig, LearnerError};
use crate::special::{log_norm_cdf, norm_cdf, softplus};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Sm1,
    Sm2,
    Sm3,
    Probit,
    Qcare,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Sm1, Model::Sm2, Model::Sm3, Model::Probit, Model::Qcare];

    pub fn name(self) -> &'static str {
        match self {
            Model::Sm1 => "sm1",
            Model::Sm2 => "sm2",
            Model::Sm3 => "sm3",
            Model::Probit => "probit",
            Model::Qcare => "qcare",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Model::Sm1 => &["beta"],
            Model::Sm2 => &["beta", "phi"],
            Model::Sm3 => &["beta", "phi", "rho"],
            Model::Probit => &["w1", "w2", "w3"],
            Model::Qcare => &["alpha"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    pub fn two_armed_only(self) -> bool {
        matches!(self, Model::Probit | Model::Qcare)
    }

    /// Build parameters from a slice in [`Model::param_names`] order.
    pub fn params(self, x: &[f64]) -> Result<ChoiceParams, ChoiceError> {
        if x.len() != self.n_params() {
            return Err(ChoiceError::ParamCount { model: self, expected: self.n_params(), found: x.len() });
        }
        let p = match self {
            Model::Sm1 => ChoiceParams::Sm1 { beta: x[0] },
            Model::Sm2 => ChoiceParams::Sm2 { beta: x[0], phi: x[1] },
            Model::Sm3 => ChoiceParams::Sm3 { beta: x[0], phi: x[1], rho: x[2] },
            Model::Probit => ChoiceParams::Probit { w1: x[0], w2: x[1], w3: x[2] },
            Model::Qcare => ChoiceParams::Qcare { alpha: x[0] },
        };
        p.check()?;
        Ok(p)
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Model {
    type Err = ChoiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Model::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.name().replace("sm", "sm-") == s.to_ascii_lowercase())
            .ok_or_else(|| ChoiceError::UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoiceError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("{model} takes {expected} parameters, got {found}")]
    ParamCount { model: Model, expected: usize, found: usize },
    #[error("non-finite parameter or input")]
    NonFinite,
    #[error("{0} is defined for two arms only")]
    TwoArmedOnly(Model),
    #[error("total uncertainty is zero")]
    DegenerateFeatures,
    #[error("model needs {0} context")]
    WrongContext(&'static str),
    #[error("belief and uncertainty vectors disagree in length or have fewer than two arms")]
    Shape,
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Parameters of one choice model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ChoiceParams {
    Sm1 { beta: f64 },
    Sm2 { beta: f64, phi: f64 },
    Sm3 { beta: f64, phi: f64, rho: f64 },
    Probit { w1: f64, w2: f64, w3: f64 },
    Qcare { alpha: f64 },
}

impl ChoiceParams {
    pub fn model(&self) -> Model {
        match self {
            ChoiceParams::Sm1 { .. } => Model::Sm1,
            ChoiceParams::Sm2 { .. } => Model::Sm2,
            ChoiceParams::Sm3 { .. } => Model::Sm3,
            ChoiceParams::Probit { .. } => Model::Probit,
            ChoiceParams::Qcare { .. } => Model::Qcare,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            ChoiceParams::Sm1 { beta } => vec![beta],
            ChoiceParams::Sm2 { beta, phi } => vec![beta, phi],
            ChoiceParams::Sm3 { beta, phi, rho } => vec![beta, phi, rho],
            ChoiceParams::Probit { w1, w2, w3 } => vec![w1, w2, w3],
            ChoiceParams::Qcare { alpha } => vec![alpha],
        }
    }

    /// (β, φ, ρ) with the forced zeros of lower-order models.
    pub fn softmax_triplet(&self) -> Option<(f64, f64, f64)> {
        match *self {
            ChoiceParams::Sm1 { beta } => Some((beta, 0.0, 0.0)),
            ChoiceParams::Sm2 { beta, phi } => Some((beta, phi, 0.0)),
            ChoiceParams::Sm3 { beta, phi, rho } => Some((beta, phi, rho)),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), ChoiceError> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ChoiceError::NonFinite)
        }
    }
}

/// Two-armed probit features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbitFeatures {
    pub v: f64,
    pub ru: f64,
    pub tu: f64,
}

impl ProbitFeatures {
    pub fn from_belief(q: &[f64], sd: &[f64]) -> Self {
        Self { v: q[0] - q[1], ru: sd[0] - sd[1], tu: (sd[0] * sd[0] + sd[1] * sd[1]).sqrt() }
    }

    /// Features after exchanging the two arms.
    pub fn swapped(&self) -> Self {
        Self { v: -self.v, ru: -self.ru, tu: self.tu }
    }
}

/// Softmax over `β(Q_k + φ·S_k + ρ·1{prev = k})`; `sd` holds posterior SDs.
pub fn sm_probs(beta: f64, phi: f64, rho: f64, q: &[f64], sd: &[f64], prev: Option<usize>) -> Result<Vec<f64>, ChoiceError> {
    if q.len() != sd.len() || q.len() < 2 {
        return Err(ChoiceError::Shape);
    }
    if ![beta, phi, rho].iter().chain(q).chain(sd).all(|v| v.is_finite()) {
        return Err(ChoiceError::NonFinite);
    }
    let idx: Vec<f64> = (0..q.len())
        .map(|k| beta * (q[k] + phi * sd[k] + if prev == Some(k) { rho } else { 0.0 }))
        .collect();
    let max = idx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = idx.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

/// Probability of choosing the first arm under the probit model.
pub fn probit_prob_arm1(w1: f64, w2: f64, w3: f64, f: ProbitFeatures) -> Result<f64, ChoiceError> {
    Ok(norm_cdf(probit_index(w1, w2, w3, f)?))
}

fn probit_index(w1: f64, w2: f64, w3: f64, f: ProbitFeatures) -> Result<f64, ChoiceError> {
    if ![w1, w2, w3, f.v, f.ru, f.tu].iter().all(|v| v.is_finite()) {
        return Err(ChoiceError::NonFinite);
    }
    if f.tu <= 0.0 {
        return Err(ChoiceError::DegenerateFeatures);
    }
    Ok(w1 * f.v + w2 * f.ru + w3 * f.v / f.tu)
}

fn qcare_z(alpha: f64, mu_hat: &[f64], counts: &[usize]) -> f64 {
    let scale = |k: usize| ((k + 1) as f64).powf(-2.0 * alpha);
    (mu_hat[0] - mu_hat[1]) / (scale(counts[0]) + scale(counts[1])).sqrt()
}

/// Probability that QCARE picks the first arm, given empirical means and pull counts.
pub fn qcare_choice_prob(alpha: f64, mu_hat: &[f64], counts: &[usize]) -> Result<f64, ChoiceError> {
    if mu_hat.len() != 2 || counts.len() != 2 {
        return Err(ChoiceError::TwoArmedOnly(Model::Qcare));
    }
    if !alpha.is_finite() || !mu_hat.iter().all(|v| v.is_finite()) {
        return Err(ChoiceError::NonFinite);
    }
    Ok(norm_cdf(qcare_z(alpha, mu_hat, counts)))
}

/// What a model conditions on at one round.
#[derive(Clone, Copy, Debug)]
pub enum Context<'a> {
    Belief { q: &'a [f64], sd: &'a [f64], prev: Option<usize> },
    Stats { mu_hat: &'a [f64], counts: &'a [usize] },
}

/// Full choice distribution of `params` in `ctx`.
pub fn choice_probs(params: &ChoiceParams, ctx: Context<'_>) -> Result<Vec<f64>, ChoiceError> {
    params.check()?;
    match (params, ctx) {
        (ChoiceParams::Probit { w1, w2, w3 }, Context::Belief { q, sd, .. }) => {
            if q.len() != 2 || sd.len() != 2 {
                return Err(ChoiceError::TwoArmedOnly(Model::Probit));
            }
            let p = probit_prob_arm1(*w1, *w2, *w3, ProbitFeatures::from_belief(q, sd))?;
            Ok(vec![p, 1.0 - p])
        }
        (ChoiceParams::Qcare { alpha }, Context::Stats { mu_hat, counts }) => {
            let p = qcare_choice_prob(*alpha, mu_hat, counts)?;
            Ok(vec![p, 1.0 - p])
        }
        (ChoiceParams::Qcare { .. }, _) => Err(ChoiceError::WrongContext("empirical-statistics")),
        (p, Context::Belief { q, sd, prev }) => {
            let (b, f, r) = p.softmax_triplet().expect("softmax family");
            sm_probs(b, f, r, q, sd, prev)
        }
        (_, Context::Stats { .. }) => Err(ChoiceError::WrongContext("belief")),
    }
}

/// Draw one arm by inverse CDF on a single uniform.
pub fn sample_choice<R: Rng + ?Sized>(params: &ChoiceParams, ctx: Context<'_>, rng: &mut R) -> Result<usize, ChoiceError> {
    let p = choice_probs(params, ctx)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(p.len() - 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct QcareRound {
    diff: f64,
    counts: [usize; 2],
    choice: usize,
}

/// A trajectory with its belief trace and empirical statistics precomputed.
///
/// The Kalman trace does not depend on choice-model parameters, so every
/// likelihood evaluation during estimation reuses it.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTrial {
    pub n_arms: usize,
    q: Vec<f64>,
    sd: Vec<f64>,
    choices: Vec<usize>,
    prev: Vec<Option<usize>>,
    qcare: Vec<QcareRound>,
    qcare_rounds: Vec<usize>,
    /// Two-armed only: (ΔQ, ΔS, ΔI) of the unchosen minus the chosen arm.
    diff2: Vec<[f64; 3]>,
}

impl PreparedTrial {
    pub fn new(traj: &Trajectory, n_arms: usize, cfg: &LearnerConfig) -> Result<Self, ChoiceError> {
        let trace = learner::belief_trace(traj, n_arms, cfg)?;
        let mut q = Vec::with_capacity(trace.len() * n_arms);
        let mut sd = Vec::with_capacity(trace.len() * n_arms);
        for b in &trace {
            q.extend_from_slice(&b.q);
            sd.extend(b.s_sq.iter().map(|v| v.sqrt()));
        }
        let choices: Vec<usize> = traj.choices().collect();
        let mut prev = Vec::with_capacity(choices.len());
        prev.push(None);
        prev.extend(choices.iter().take(choices.len().saturating_sub(1)).map(|&c| Some(c)));
        prev.truncate(choices.len());

        let mut qcare = Vec::new();
        let mut qcare_rounds = Vec::new();
        if n_arms == 2 {
            let mut sums = [0.0; 2];
            let mut counts = [0usize; 2];
            for (i, s) in traj.steps.iter().enumerate() {
                if counts[0] > 0 && counts[1] > 0 {
                    let diff = sums[0] / counts[0] as f64 - sums[1] / counts[1] as f64;
                    qcare.push(QcareRound { diff, counts, choice: s.choice });
                    qcare_rounds.push(i);
                }
                sums[s.choice] += s.reward;
                counts[s.choice] += 1;
            }
        }
        let mut diff2 = Vec::new();
        if n_arms == 2 {
            diff2 = (0..choices.len())
                .map(|t| {
                    let c = choices[t];
                    let o = 1 - c;
                    let ind = |a: usize| if prev[t] == Some(a) { 1.0 } else { 0.0 };
                    let (qt, st) = (&q[2 * t..2 * t + 2], &sd[2 * t..2 * t + 2]);
                    [qt[o] - qt[c], st[o] - st[c], ind(o) - ind(c)]
                })
                .collect();
        }
        Ok(Self { n_arms, q, sd, choices, prev, qcare, qcare_rounds, diff2 })
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn q(&self, t: usize) -> &[f64] {
        &self.q[t * self.n_arms..(t + 1) * self.n_arms]
    }

    pub fn sd(&self, t: usize) -> &[f64] {
        &self.sd[t * self.n_arms..(t + 1) * self.n_arms]
    }

    pub fn choice(&self, t: usize) -> usize {
        self.choices[t]
    }

    pub fn prev(&self, t: usize) -> Option<usize> {
        self.prev[t]
    }

    /// Number of rounds that enter the QCARE likelihood.
    pub fn qcare_len(&self) -> usize {
        self.qcare.len()
    }

    /// Visit `(round index, log p(choice))` for every round the model scores.
    pub fn for_each_round(&self, model: Model, x: &[f64], mut f: impl FnMut(usize, f64)) {
        match model {
            Model::Sm1 | Model::Sm2 | Model::Sm3 => {
                let beta = x[0];
                let phi = x.get(1).copied().unwrap_or(0.0);
                let rho = if model == Model::Sm3 { x[2] } else { 0.0 };
                let k = self.n_arms;
                if k == 2 {
                    for (t, d) in self.diff2.iter().enumerate() {
                        f(t, -softplus(beta * (d[0] + phi * d[1] + rho * d[2])));
                    }
                    return;
                }
                let mut idx = [0.0f64; 16];
                let mut buf;
                let idx: &mut [f64] = if k <= 16 {
                    &mut idx[..k]
                } else {
                    buf = vec![0.0; k];
                    &mut buf
                };
                for t in 0..self.choices.len() {
                    let q = self.q(t);
                    let sd = self.sd(t);
                    let prev = self.prev[t];
                    let mut max = f64::NEG_INFINITY;
                    for a in 0..k {
                        let pers = if prev == Some(a) { rho } else { 0.0 };
                        idx[a] = beta * (q[a] + phi * sd[a] + pers);
                        max = max.max(idx[a]);
                    }
                    let z: f64 = idx.iter().map(|v| (v - max).exp()).sum();
                    f(t, idx[self.choices[t]] - max - z.ln());
                }
            }
            Model::Probit => {
                for t in 0..self.choices.len() {
                    let feat = ProbitFeatures::from_belief(self.q(t), self.sd(t));
                    let lp = match probit_index(x[0], x[1], x[2], feat) {
                        Ok(z) if self.choices[t] == 0 => log_norm_cdf(z),
                        Ok(z) => log_norm_cdf(-z),
                        Err(_) => f64::NAN,
                    };
                    f(t, lp);
                }
            }
            Model::Qcare => {
                for (r, &t) in self.qcare.iter().zip(&self.qcare_rounds) {
                    let scale = |k: usize| ((k + 1) as f64).powf(-2.0 * x[0]);
                    let z = r.diff / (scale(r.counts[0]) + scale(r.counts[1])).sqrt();
                    f(t, if r.choice == 0 { log_norm_cdf(z) } else { log_norm_cdf(-z) });
                }
            }
        }
    }

    /// Log-likelihood of the trajectory's choices; NaN for invalid parameters.
    pub fn loglik(&self, model: Model, x: &[f64]) -> f64 {
        if matches!(model, Model::Sm1 | Model::Sm2 | Model::Sm3) {
            return if self.n_arms == 2 { self.sm2_loglik(model, x) } else { self.smk_loglik(model, x) };
        }
        let mut total = 0.0;
        self.for_each_round(model, x, |_, lp| total += lp);
        total
    }

    /// Two-armed softmax log-likelihood. Σ ln(1 + e^{−|z|}) is accumulated as
    /// the log of running products, one `ln` per block of rounds.
    fn sm2_loglik(&self, model: Model, x: &[f64]) -> f64 {
        let beta = x[0];
        let phi = x.get(1).copied().unwrap_or(0.0);
        let rho = if model == Model::Sm3 { x[2] } else { 0.0 };
        let mut total = 0.0;
        for chunk in self.diff2.chunks(512) {
            let mut prod = 1.0;
            for d in chunk {
                let z = beta * (d[0] + phi * d[1] + rho * d[2]);
                total -= z.max(0.0);
                prod *= 1.0 + (-z.abs()).exp();
            }
            total -= prod.ln();
        }
        total
    }

    /// K-armed softmax log-likelihood with the log-normalisers batched the
    /// same way as [`Self::sm2_loglik`].
    fn smk_loglik(&self, model: Model, x: &[f64]) -> f64 {
        let beta = x[0];
        let phi = x.get(1).copied().unwrap_or(0.0);
        let rho = if model == Model::Sm3 { x[2] } else { 0.0 };
        let k = self.n_arms;
        // Each normaliser lies in [1, k]; keep products below 2^900.
        let block = ((900.0 / (k as f64).log2()).floor() as usize).max(1);
        let mut idx = vec![0.0; k];
        let mut total = 0.0;
        let mut prod = 1.0;
        let mut filled = 0;
        for t in 0..self.choices.len() {
            let q = self.q(t);
            let sd = self.sd(t);
            let prev = self.prev[t];
            let mut max = f64::NEG_INFINITY;
            for a in 0..k {
                let pers = if prev == Some(a) { rho } else { 0.0 };
                idx[a] = beta * (q[a] + phi * sd[a] + pers);
                max = max.max(idx[a]);
            }
            total += idx[self.choices[t]] - max;
            prod *= idx.iter().map(|v| (v - max).exp()).sum::<f64>();
            filled += 1;
            if filled == block {
                total -= prod.ln();
                prod = 1.0;
                filled = 0;
            }
        }
        total - prod.ln()
    }

    /// Per-round log-likelihoods (0 for rounds the model does not score).
    pub fn round_logliks(&self, model: Model, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.for_each_round(model, x, |t, lp| out[t] = lp);
        out
    }
}

/// Log-likelihood of one trajectory under `params`.
pub fn loglik(params: &ChoiceParams, traj: &Trajectory, n_arms: usize, cfg: &LearnerConfig) -> Result<f64, ChoiceError> {
    params.check()?;
    let model = params.model();
    if model.two_armed_only() && n_arms != 2 {
        return Err(ChoiceError::TwoArmedOnly(model));
    }
    let prepared = PreparedTrial::new(traj, n_arms, cfg)?;
    let ll = prepared.loglik(model, &params.to_vec());
    if ll.is_nan() {
        return Err(ChoiceError::DegenerateFeatures);
    }
    Ok(ll)
}
