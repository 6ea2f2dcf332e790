//! Hierarchical fits: empirical-Bayes MAP and adaptive Metropolis-within-Gibbs.

use super::diag::Diagnostic;
use super::optim::hooke_jeeves;
use super::prior::{log_half_cauchy, HierPrior};
use super::{prepare, EstimError, SubjectData};
use crate::choice::Model;
use crate::domain::Dataset;
use crate::learner::LearnerConfig;
use crate::rng::{self, tags, SimRng};
use crate::special::{log_normal_pdf, mean, quantile_sorted, sample_var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Add joint shift/scale moves of the group and all subjects.
    pub noncentered: bool,
    /// Centered group moves per iteration; they need no likelihood evaluations.
    pub group_repeats: usize,
    /// Joint scale moves per parameter and iteration.
    pub scale_repeats: usize,
    pub init_attempts: usize,
    pub runaway: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iters: 1000,
            warmup: 500,
            seed: 1,
            target_accept: 0.44,
            noncentered: true,
            group_repeats: 1,
            scale_repeats: 2,
            init_attempts: 10,
            runaway: 1e3,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EstimError> {
        if self.chains == 0 || self.warmup >= self.iters {
            return Err(EstimError::Config(format!(
                "need chains ≥ 1 and warmup < iters (chains {}, iters {}, warmup {})",
                self.chains, self.iters, self.warmup
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(EstimError::Config("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.iters - self.warmup
    }
}

/// Point estimates from the empirical-Bayes coordinate search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub model: Model,
    pub param_names: Vec<String>,
    pub subject_ids: Vec<String>,
    /// `subjects[s][j]`.
    pub subjects: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

const EB_STAGES: usize = 3;
const WEAK_SD: f64 = 10.0;
const SIGMA_FLOOR: f64 = 1e-3;
const BLOCK_TARGET: f64 = 0.234;

fn starts(prior: &HierPrior) -> Vec<Vec<f64>> {
    (0..3)
        .map(|i| {
            prior
                .params
                .iter()
                .map(|p| match p.bounds {
                    Some((lo, hi)) => p.to_u(lo + (hi - lo) * [0.005, 0.05, 0.25][i]),
                    None => [-1.0, 0.0, 2.0][i],
                })
                .collect()
        })
        .collect()
}

fn fit_subject(
    subj: &SubjectData,
    model: Model,
    prior: &HierPrior,
    group: Option<(&[f64], &[f64])>,
    inits: &[Vec<f64>],
) -> (Vec<f64>, bool) {
    let objective = |u: &[f64]| {
        let x: Vec<f64> = prior.params.iter().zip(u).map(|(p, &v)| p.from_u(v)).collect();
        let pen: f64 = match group {
            Some((mu, sigma)) => (0..x.len()).map(|j| log_normal_pdf(x[j], mu[j], sigma[j])).sum(),
            None => prior
                .params
                .iter()
                .zip(&x)
                .filter(|(p, _)| p.bounds.is_none())
                .map(|(_, &v)| log_normal_pdf(v, 0.0, WEAK_SD))
                .sum(),
        };
        let v = -(subj.loglik(model, &x) + pen);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let best = inits
        .iter()
        .map(|u0| hooke_jeeves(objective, u0, 0.5, 1e-5, 2000))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    let x = prior.params.iter().zip(&best.x).map(|(p, &v)| p.from_u(v)).collect();
    (x, best.converged && best.value.is_finite())
}

fn group_moments(xs: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
        mu.push(mean(&col));
        sigma.push(sample_var(&col).sqrt().max(SIGMA_FLOOR));
    }
    (mu, sigma)
}

pub(crate) fn map_fit_prepared(subjects: &[SubjectData], model: Model, prior: &HierPrior) -> MapFit {
    let d = model.n_params();
    let first = starts(prior);
    let stage0: Vec<(Vec<f64>, bool)> =
        subjects.par_iter().map(|s| fit_subject(s, model, prior, None, &first)).collect();
    let mut xs: Vec<Vec<f64>> = stage0.iter().map(|r| r.0.clone()).collect();
    let mut ok: Vec<bool> = stage0.iter().map(|r| r.1).collect();
    let (mut mu, mut sigma) = group_moments(&xs, d);
    if subjects.len() > 1 {
        for _ in 0..EB_STAGES {
            let res: Vec<(Vec<f64>, bool)> = subjects
                .par_iter()
                .zip(&xs)
                .map(|(s, x)| {
                    let u0: Vec<f64> = prior.params.iter().zip(x).map(|(p, &v)| p.to_u(v)).collect();
                    let mut inits = vec![u0];
                    inits.push(prior.params.iter().zip(&mu).map(|(p, &m)| p.to_u(clamp_inside(p, m))).collect());
                    fit_subject(s, model, prior, Some((&mu, &sigma)), &inits)
                })
                .collect();
            xs = res.iter().map(|r| r.0.clone()).collect();
            ok = res.iter().map(|r| r.1).collect();
            (mu, sigma) = group_moments(&xs, d);
        }
    }
    let warnings: Vec<String> = subjects
        .iter()
        .zip(&ok)
        .filter(|(_, &c)| !c)
        .map(|(s, _)| format!("map search for subject {} stopped before convergence", s.id))
        .collect();
    MapFit {
        model,
        param_names: prior.params.iter().map(|p| p.name.clone()).collect(),
        subject_ids: subjects.iter().map(|s| s.id.clone()).collect(),
        subjects: xs,
        mu,
        sigma,
        converged: warnings.is_empty(),
        warnings,
    }
}

fn clamp_inside(p: &super::prior::ParamPrior, x: f64) -> f64 {
    match p.bounds {
        Some((lo, hi)) => {
            let pad = 1e-4 * (hi - lo);
            x.clamp(lo + pad, hi - pad)
        }
        None => x,
    }
}

/// Coordinate-search point estimates with empirical-Bayes shrinkage.
pub fn map_fit(model: Model, dataset: &Dataset, prior: &HierPrior, learner: &LearnerConfig) -> Result<MapFit, EstimError> {
    prior.validate(model).map_err(EstimError::Config)?;
    let subjects = prepare(dataset, model, learner)?;
    check_subjects(&subjects, model)?;
    Ok(map_fit_prepared(&subjects, model, prior))
}

fn check_subjects(subjects: &[SubjectData], model: Model) -> Result<(), EstimError> {
    match subjects.iter().find(|s| s.n_scored(model) == 0) {
        Some(s) => Err(EstimError::EmptySubject(s.id.clone())),
        None => Ok(()),
    }
}

/// Post-warmup draws of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// `mu[j][i]`.
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// `x[s][j][i]`.
    pub x: Vec<Vec<Vec<f64>>>,
    /// Subject log-likelihood at each kept draw, `loglik[s][i]`.
    pub loglik: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl ParamSummary {
    fn of(name: String, chains: &[Vec<f64>]) -> Self {
        let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
        let m = mean(&all);
        let sd = sample_var(&all).sqrt();
        all.sort_by(f64::total_cmp);
        let d = Diagnostic::of(chains);
        Self { name, mean: m, sd, q05: quantile_sorted(&all, 0.05), q95: quantile_sorted(&all, 0.95), rhat: d.rhat, ess: d.ess }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.q05 && v <= self.q95
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub subject: f64,
    pub group_mu: f64,
    pub group_sigma: f64,
    pub shift: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierPosterior {
    pub model: Model,
    pub param_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub n_choices: usize,
    pub prior: HierPrior,
    pub config: McmcConfig,
    pub learner: LearnerConfig,
    pub chains: Vec<ChainDraws>,
    /// Keyed `mu_<param>` / `sigma_<param>`.
    pub diagnostics: BTreeMap<String, Diagnostic>,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub acceptance: Acceptance,
    pub init: MapFit,
}

impl HierPosterior {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.mu.first().map_or(0, Vec::len)).sum()
    }

    fn group_chains(&self, sigma: bool, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| if sigma { c.sigma[j].clone() } else { c.mu[j].clone() }).collect()
    }

    /// `mu_*` then `sigma_*` summaries.
    pub fn group_summary(&self) -> Vec<ParamSummary> {
        let mut out = Vec::new();
        for sigma in [false, true] {
            for (j, name) in self.param_names.iter().enumerate() {
                let label = format!("{}_{name}", if sigma { "sigma" } else { "mu" });
                out.push(ParamSummary::of(label, &self.group_chains(sigma, j)));
            }
        }
        out
    }

    pub fn subject_summary(&self, s: usize) -> Vec<ParamSummary> {
        self.param_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let ch: Vec<Vec<f64>> = self.chains.iter().map(|c| c.x[s][j].clone()).collect();
                ParamSummary::of(name.clone(), &ch)
            })
            .collect()
    }

    /// Draw `m` (chains concatenated): group means and SDs.
    pub fn group_draw(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let (c, i) = self.locate(m);
        let ch = &self.chains[c];
        (ch.mu.iter().map(|v| v[i]).collect(), ch.sigma.iter().map(|v| v[i]).collect())
    }

    pub fn subject_draw(&self, s: usize, m: usize) -> Vec<f64> {
        let (c, i) = self.locate(m);
        self.chains[c].x[s].iter().map(|v| v[i]).collect()
    }

    pub fn subject_loglik(&self, s: usize, m: usize) -> f64 {
        let (c, i) = self.locate(m);
        self.chains[c].loglik[s][i]
    }

    fn locate(&self, m: usize) -> (usize, usize) {
        let per = self.chains[0].mu[0].len();
        (m / per, m % per)
    }

    /// CSV table with one row per group scalar.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("param,mean,sd,q05,q95,rhat,ess\n");
        for p in self.group_summary() {
            out.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.1}\n", p.name, p.mean, p.sd, p.q05, p.q95, p.rhat, p.ess));
        }
        out
    }
}

struct Chain<'a> {
    subjects: &'a [SubjectData],
    model: Model,
    prior: &'a HierPrior,
    cfg: &'a McmcConfig,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    ll: Vec<f64>,
    subject_rngs: Vec<SimRng>,
    subject_steps: Vec<Vec<f64>>,
    /// Geometric mean of each group SD over warmup; subject proposals scale
    /// with `sigma / sigma_ref`.
    sigma_ref: Vec<f64>,
    log_sigma_sum: Vec<f64>,
    /// Per-subject joint proposals learned from early warmup draws.
    blocks: Vec<Block>,
    /// Log step sizes of the group moves: `[mu, sigma, shift, scale][j]`.
    group_steps: [Vec<f64>; 4],
}

#[derive(Clone)]
struct Block {
    sum: Vec<f64>,
    outer: Vec<f64>,
    n: usize,
    /// Lower Cholesky factor of the draw covariance, row-major.
    chol: Option<Vec<f64>>,
    log_scale: f64,
}

impl Block {
    fn new(d: usize) -> Self {
        Self { sum: vec![0.0; d], outer: vec![0.0; d * d], n: 0, chol: None, log_scale: (2.38 / (d as f64).sqrt()).ln() }
    }

    fn record(&mut self, u: &[f64]) {
        let d = u.len();
        for a in 0..d {
            self.sum[a] += u[a];
            for b in 0..d {
                self.outer[a * d + b] += u[a] * u[b];
            }
        }
        self.n += 1;
    }

    fn freeze(&mut self) {
        let d = self.sum.len();
        if self.n < 10 || d < 2 {
            return;
        }
        let n = self.n as f64;
        let cov = nalgebra::DMatrix::from_fn(d, d, |a, b| {
            let c = (self.outer[a * d + b] - self.sum[a] * self.sum[b] / n) / (n - 1.0);
            if a == b {
                c + 1e-6
            } else {
                c
            }
        });
        self.chol = cov.cholesky().map(|c| c.l().iter().copied().collect::<Vec<f64>>()).map(|colmajor| {
            let mut rm = vec![0.0; d * d];
            for a in 0..d {
                for b in 0..d {
                    rm[a * d + b] = colmajor[b * d + a];
                }
            }
            rm
        });
    }
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

fn accept(rng: &mut SimRng, log_ratio: f64) -> bool {
    log_ratio.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio)
}

fn adapt(step: &mut f64, accepted: bool, n: usize, target: f64) {
    *step += ((accepted as u8 as f64) - target) / (1.0 + n as f64).powf(0.6);
}

/// Stable per-subject tag so a subject's stream follows its id.
fn id_tag(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<'a> Chain<'a> {
    fn init(
        subjects: &'a [SubjectData],
        model: Model,
        prior: &'a HierPrior,
        cfg: &'a McmcConfig,
        map: &MapFit,
        chain: usize,
    ) -> Result<Self, EstimError> {
        let d = model.n_params();
        for attempt in 0..cfg.init_attempts {
            let mut rng = rng::stream(cfg.seed, &[tags::MCMC_INIT, chain as u64, attempt as u64]);
            let mut mu = Vec::with_capacity(d);
            let mut sigma = Vec::with_capacity(d);
            for (j, p) in prior.params.iter().enumerate() {
                let s0 = map.sigma[j].max(0.05 * (1.0 + map.mu[j].abs()));
                mu.push(clamp_inside(p, map.mu[j] + 0.5 * s0 * normal(&mut rng)));
                sigma.push(s0 * (0.5 * normal(&mut rng)).exp());
            }
            let u: Vec<Vec<f64>> = map
                .subjects
                .iter()
                .map(|x| prior.params.iter().zip(x).map(|(p, &v)| p.to_u(clamp_inside(p, v)) + 0.3 * normal(&mut rng)).collect())
                .collect();
            let x: Vec<Vec<f64>> = u.iter().map(|u| prior.params.iter().zip(u).map(|(p, &v)| p.from_u(v)).collect()).collect();
            let ll: Vec<f64> = subjects.par_iter().zip(&x).map(|(s, x)| s.loglik(model, x)).collect();
            let ok = ll.iter().all(|v| v.is_finite()) && x.iter().flatten().all(|v| v.is_finite());
            if !ok {
                continue;
            }
            let subject_rngs = subjects
                .iter()
                .map(|s| rng::stream(cfg.seed, &[tags::MCMC_SUBJECT, chain as u64, id_tag(&s.id)]))
                .collect();
            let step0 = |v: f64| vec![f64::ln(v); d];
            return Ok(Self {
                subjects,
                model,
                prior,
                cfg,
                mu,
                sigma: sigma.clone(),
                x,
                u,
                ll,
                subject_rngs,
                subject_steps: vec![vec![0.5f64.ln(); d]; subjects.len()],
                sigma_ref: sigma.clone(),
                log_sigma_sum: vec![0.0; d],
                blocks: vec![Block::new(d); subjects.len()],
                group_steps: [step0(0.1), step0(0.2), step0(0.1), step0(0.1)],
            });
        }
        Err(EstimError::InitFailed { attempts: cfg.init_attempts })
    }

    fn update_subjects(&mut self, adapt_n: Option<usize>) -> (usize, usize) {
        let (model, prior, mu, sigma) = (self.model, self.prior, &self.mu, &self.sigma);
        let target = self.cfg.target_accept;
        let ratio: Vec<f64> = sigma.iter().zip(&self.sigma_ref).map(|(s, r)| (s / r).clamp(1e-2, 1e2)).collect();
        let counts: Vec<(usize, usize)> = self
            .subjects
            .par_iter()
            .zip(self.x.par_iter_mut())
            .zip(self.u.par_iter_mut())
            .zip(self.ll.par_iter_mut())
            .zip(self.subject_rngs.par_iter_mut())
            .zip(self.subject_steps.par_iter_mut())
            .zip(self.blocks.par_iter_mut())
            .map(|((((((subj, x), u), ll), rng), steps), block)| {
                let mut acc = 0;
                let mut tried = 0;
                // Once the joint proposal is tuned, it replaces the scalar moves.
                let scalar = adapt_n.is_some() || block.chol.is_none();
                for (j, p) in prior.params.iter().enumerate().filter(|_| scalar) {
                    tried += 1;
                    let u_new = u[j] + steps[j].exp() * ratio[j] * normal(rng);
                    let x_new = p.from_u(u_new);
                    let old = x[j];
                    x[j] = x_new;
                    let ll_new = subj.loglik(model, x);
                    let lr = ll_new - *ll + log_normal_pdf(x_new, mu[j], sigma[j]) - log_normal_pdf(old, mu[j], sigma[j])
                        + p.log_jac(u_new)
                        - p.log_jac(u[j]);
                    let ok = p.inside(x_new) && accept(rng, lr);
                    if ok {
                        u[j] = u_new;
                        *ll = ll_new;
                        acc += 1;
                    } else {
                        x[j] = old;
                    }
                    if let Some(n) = adapt_n {
                        adapt(&mut steps[j], ok, n, target);
                    }
                }
                if let Some(l) = &block.chol {
                    let d = u.len();
                    let z: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
                    let scale = block.log_scale.exp();
                    let u_new: Vec<f64> = (0..d)
                        .map(|a| u[a] + scale * ratio[a] * (0..=a).map(|b| l[a * d + b] * z[b]).sum::<f64>())
                        .collect();
                    let x_new: Vec<f64> = prior.params.iter().zip(&u_new).map(|(p, &v)| p.from_u(v)).collect();
                    let inside = prior.params.iter().zip(&x_new).all(|(p, &v)| p.inside(v));
                    let ll_new = subj.loglik(model, &x_new);
                    let mut lr = ll_new - *ll;
                    for (j, p) in prior.params.iter().enumerate() {
                        lr += log_normal_pdf(x_new[j], mu[j], sigma[j]) - log_normal_pdf(x[j], mu[j], sigma[j])
                            + p.log_jac(u_new[j])
                            - p.log_jac(u[j]);
                    }
                    let ok = inside && accept(rng, lr);
                    tried += 1;
                    if ok {
                        *u = u_new;
                        *x = x_new;
                        *ll = ll_new;
                        acc += 1;
                    }
                    if let Some(n) = adapt_n {
                        adapt(&mut block.log_scale, ok, n, BLOCK_TARGET);
                    }
                }
                (acc, tried)
            })
            .collect();
        counts.iter().fold((0, 0), |(a, t), c| (a + c.0, t + c.1))
    }

    fn group_prior_terms(&self, j: usize, mu: f64, sigma: f64, xs: impl Iterator<Item = f64>) -> f64 {
        let p = &self.prior.params[j];
        let n = self.subjects.len() as f64;
        let dens: f64 = xs.map(|x| log_normal_pdf(x, mu, sigma)).sum();
        dens - n * p.log_normaliser(mu, sigma)
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().map(move |x| x[j])
    }

    /// One sweep of group moves; returns accept flags `[mu, sigma, shift, scale]`
    /// per j, `None` where a move was not attempted. Joint moves visit one
    /// parameter per iteration in turn.
    fn update_group(&mut self, rng: &mut SimRng, it: usize, adapt_n: Option<usize>) -> Vec<[Option<bool>; 4]> {
        let d = self.prior.params.len();
        let target = self.cfg.target_accept;
        let mut flags = Vec::with_capacity(d);
        for j in 0..d {
            let mut f = [None; 4];
            for _ in 0..self.cfg.group_repeats.max(1) {
                let (a, b) = self.centered_moves(rng, j);
                if let Some(n) = adapt_n {
                    adapt(&mut self.group_steps[0][j], a, n, target);
                    adapt(&mut self.group_steps[1][j], b, n, target);
                }
                (f[0], f[1]) = (Some(a), Some(b));
            }
            if self.cfg.noncentered && it % d == j {
                let ok = self.joint_move(rng, j, false);
                if let Some(n) = adapt_n {
                    adapt(&mut self.group_steps[2][j], ok, n / d, target);
                }
                f[2] = Some(ok);
                for _ in 0..self.cfg.scale_repeats.max(1) {
                    let ok = self.joint_move(rng, j, true);
                    if let Some(n) = adapt_n {
                        adapt(&mut self.group_steps[3][j], ok, n / d, target);
                    }
                    f[3] = Some(ok);
                }
            }
            flags.push(f);
        }
        flags
    }

    fn centered_moves(&mut self, rng: &mut SimRng, j: usize) -> (bool, bool) {
        let p = &self.prior.params[j];
        let scale_hc = self.prior.sigma_scale;
        let (mu, sigma) = (self.mu[j], self.sigma[j]);
        let mut moved = (false, false);
        let base = self.group_prior_terms(j, mu, sigma, self.column(j));
        let mu_new = mu + self.group_steps[0][j].exp() * normal(rng);
        if p.inside(mu_new) {
            let lr = self.group_prior_terms(j, mu_new, sigma, self.column(j)) - base;
            if accept(rng, lr) {
                self.mu[j] = mu_new;
                moved.0 = true;
            }
        }
        let mu = self.mu[j];
        let base = self.group_prior_terms(j, mu, sigma, self.column(j));
        let sigma_new = sigma * (self.group_steps[1][j].exp() * normal(rng)).exp();
        let lr = self.group_prior_terms(j, mu, sigma_new, self.column(j)) - base
            + log_half_cauchy(sigma_new, scale_hc)
            - log_half_cauchy(sigma, scale_hc)
            + (sigma_new / sigma).ln();
        if accept(rng, lr) {
            self.sigma[j] = sigma_new;
            moved.1 = true;
        }
        moved
    }

    /// Move the group and every subject together: a shift of location or a
    /// rescaling of deviations.
    fn joint_move(&mut self, rng: &mut SimRng, j: usize, scale: bool) -> bool {
        let p = self.prior.params[j].clone();
        let (mu, sigma) = (self.mu[j], self.sigma[j]);
        let step = self.group_steps[if scale { 3 } else { 2 }][j].exp() * normal(rng);
        let (mu_new, sigma_new, c) = if scale { (mu, sigma * step.exp(), step.exp()) } else { (mu + step, sigma, 1.0) };
        let moved: Vec<f64> = self.column(j).map(|x| if scale { mu + c * (x - mu) } else { x + step }).collect();
        if !(p.inside(mu_new) || p.bounds.is_none()) || !moved.iter().all(|&x| p.inside(x)) {
            // Consume the uniform anyway so the stream does not depend on the branch.
            let _: f64 = rng.random();
            return false;
        }
        let (model, subjects) = (self.model, self.subjects);
        let ll_new: Vec<f64> = subjects
            .par_iter()
            .zip(&self.x)
            .zip(&moved)
            .map(|((s, x), &xj)| {
                let mut x2 = x.clone();
                x2[j] = xj;
                s.loglik(model, &x2)
            })
            .collect();
        let n = subjects.len() as f64;
        let mut lr: f64 = ll_new.iter().zip(&self.ll).map(|(a, b)| a - b).sum();
        lr += self.group_prior_terms(j, mu_new, sigma_new, moved.iter().copied())
            - self.group_prior_terms(j, mu, sigma, self.column(j));
        if scale {
            let hc = self.prior.sigma_scale;
            lr += log_half_cauchy(sigma_new, hc) - log_half_cauchy(sigma, hc) + (n + 1.0) * c.ln();
        }
        if !accept(rng, lr) {
            return false;
        }
        self.mu[j] = mu_new;
        self.sigma[j] = sigma_new;
        for (s, &xj) in moved.iter().enumerate() {
            self.x[s][j] = xj;
            self.u[s][j] = p.to_u(xj);
        }
        self.ll = ll_new;
        true
    }

    fn check_runaway(&self) -> Result<(), EstimError> {
        let limit = self.cfg.runaway;
        for (j, p) in self.prior.params.iter().enumerate() {
            if p.bounds.is_some() {
                continue;
            }
            let worst = self.column(j).chain([self.mu[j], self.sigma[j]]).fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if !(worst.abs() <= limit) {
                return Err(EstimError::Runaway { param: p.name.clone(), value: worst });
            }
        }
        Ok(())
    }
}

struct ChainResult {
    draws: ChainDraws,
    accept: [f64; 5],
}

fn run_chain(
    subjects: &[SubjectData],
    model: Model,
    prior: &HierPrior,
    cfg: &McmcConfig,
    map: &MapFit,
    chain: usize,
) -> Result<ChainResult, EstimError> {
    let d = model.n_params();
    let n = subjects.len();
    let kept = cfg.kept();
    let mut st = Chain::init(subjects, model, prior, cfg, map, chain)?;
    let mut grng = rng::stream(cfg.seed, &[tags::MCMC_GROUP, chain as u64]);
    let mut draws = ChainDraws {
        mu: vec![Vec::with_capacity(kept); d],
        sigma: vec![Vec::with_capacity(kept); d],
        x: vec![vec![Vec::with_capacity(kept); d]; n],
        loglik: vec![Vec::with_capacity(kept); n],
    };
    let mut acc = [0usize; 5];
    let mut tried = [0usize; 5];
    for it in 0..cfg.iters {
        let adapt_n = (it < cfg.warmup).then_some(it);
        if it < cfg.warmup {
            for j in 0..d {
                st.log_sigma_sum[j] += st.sigma[j].ln();
                st.sigma_ref[j] = (st.log_sigma_sum[j] / (it + 1) as f64).exp();
            }
        }
        let (a, t) = st.update_subjects(adapt_n);
        if d > 1 && it >= cfg.warmup / 5 && it < cfg.warmup / 2 {
            for (b, u) in st.blocks.iter_mut().zip(&st.u) {
                b.record(u);
            }
        } else if d > 1 && it == cfg.warmup / 2 {
            st.blocks.iter_mut().for_each(Block::freeze);
        }
        let flags = st.update_group(&mut grng, it, adapt_n);
        st.check_runaway()?;
        if it < cfg.warmup {
            continue;
        }
        acc[0] += a;
        tried[0] += t;
        for f in &flags {
            for (k, v) in f.iter().enumerate() {
                if let Some(ok) = v {
                    acc[k + 1] += *ok as usize;
                    tried[k + 1] += 1;
                }
            }
        }
        for j in 0..d {
            draws.mu[j].push(st.mu[j]);
            draws.sigma[j].push(st.sigma[j]);
        }
        for s in 0..n {
            for j in 0..d {
                draws.x[s][j].push(st.x[s][j]);
            }
            draws.loglik[s].push(st.ll[s]);
        }
    }
    let rate = |k: usize| if tried[k] == 0 { f64::NAN } else { acc[k] as f64 / tried[k] as f64 };
    Ok(ChainResult { draws, accept: [rate(0), rate(1), rate(2), rate(3), rate(4)] })
}

/// Hierarchical posterior by adaptive Metropolis-within-Gibbs.
pub fn fit_hier(
    model: Model,
    dataset: &Dataset,
    prior: &HierPrior,
    learner: &LearnerConfig,
    cfg: &McmcConfig,
) -> Result<HierPosterior, EstimError> {
    prior.validate(model).map_err(EstimError::Config)?;
    cfg.validate()?;
    let subjects = prepare(dataset, model, learner)?;
    check_subjects(&subjects, model)?;
    fit_hier_prepared(&subjects, model, prior, learner, cfg)
}

pub(crate) fn fit_hier_prepared(
    subjects: &[SubjectData],
    model: Model,
    prior: &HierPrior,
    learner: &LearnerConfig,
    cfg: &McmcConfig,
) -> Result<HierPosterior, EstimError> {
    let map = map_fit_prepared(subjects, model, prior);
    let results: Vec<ChainResult> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(subjects, model, prior, cfg, &map, c))
        .collect::<Result<_, _>>()?;
    let avg = |k: usize| mean(&results.iter().map(|r| r.accept[k]).collect::<Vec<_>>());
    let acceptance = Acceptance { subject: avg(0), group_mu: avg(1), group_sigma: avg(2), shift: avg(3), scale: avg(4) };
    let chains: Vec<ChainDraws> = results.into_iter().map(|r| r.draws).collect();

    let names: Vec<String> = prior.params.iter().map(|p| p.name.clone()).collect();
    let mut diagnostics = BTreeMap::new();
    let mut warnings = map.warnings.clone();
    let mut converged = true;
    for (j, name) in names.iter().enumerate() {
        for (label, sig) in [("mu", false), ("sigma", true)] {
            let ch: Vec<Vec<f64>> = chains.iter().map(|c| if sig { c.sigma[j].clone() } else { c.mu[j].clone() }).collect();
            let dg = Diagnostic::of(&ch);
            let key = format!("{label}_{name}");
            if !(dg.rhat <= 1.05 && dg.ess >= 100.0) {
                converged = false;
                warnings.push(format!("{key}: rhat {:.3}, ess {:.0}", dg.rhat, dg.ess));
            }
            diagnostics.insert(key, dg);
        }
    }
    if cfg.chains > 1 {
        for (s, subj) in subjects.iter().enumerate() {
            for (j, name) in names.iter().enumerate() {
                let ch: Vec<Vec<f64>> = chains.iter().map(|c| c.x[s][j].clone()).collect();
                let r = super::diag::split_rhat(&ch);
                if r > 1.05 {
                    warnings.push(format!("subject {} {name}: rhat {r:.3}", subj.id));
                }
            }
        }
    }
    Ok(HierPosterior {
        model,
        param_names: names,
        subject_ids: subjects.iter().map(|s| s.id.clone()).collect(),
        n_choices: subjects.iter().map(|s| s.n_scored(model)).sum(),
        prior: prior.clone(),
        config: cfg.clone(),
        learner: learner.clone(),
        chains,
        diagnostics,
        converged,
        warnings,
        acceptance,
        init: map,
    })
}
