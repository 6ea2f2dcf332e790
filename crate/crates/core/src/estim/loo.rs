//! Pareto-smoothed importance-sampling leave-one-subject-out.

use super::hier::HierPosterior;
use super::{prepare, EstimError, SubjectData};
use crate::choice::Model;
use crate::domain::Dataset;
use crate::rng::{self, tags};
use crate::special::log_sum_exp;
use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_DRAWS: usize = 100;
pub const K_WARN: f64 = 0.7;

/// What is held out: the subject's likelihood at its own sampled parameters
/// (`Conditional`), or its likelihood integrated over the group distribution
/// (`Marginal`), so that a new subject is predicted from the group alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooUnit {
    #[default]
    Marginal,
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LooConfig {
    pub unit: LooUnit,
    /// Importance draws per subject for the marginal likelihood.
    pub proposal_draws: usize,
    pub proposal_df: f64,
    pub proposal_inflate: f64,
    pub seed: u64,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self { unit: LooUnit::Marginal, proposal_draws: 500, proposal_df: 5.0, proposal_inflate: 1.5, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectLoo {
    pub id: String,
    pub elpd: f64,
    pub k_hat: f64,
    pub n_choices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub model: Model,
    pub unit: LooUnit,
    pub subjects: Vec<SubjectLoo>,
    pub elpd: f64,
    pub se: f64,
    pub n_choices: usize,
    pub elpd_normalized: f64,
    pub n_draws: usize,
    pub warnings: Vec<String>,
    pub config: LooConfig,
}

impl LooReport {
    /// Share of subjects with k̂ ≤ 0.7.
    pub fn k_ok_fraction(&self) -> f64 {
        self.subjects.iter().filter(|s| s.k_hat <= K_WARN).count() as f64 / self.subjects.len() as f64
    }
}

/// Zhang–Stephens generalised-Pareto fit to positive exceedances.
/// Returns `(k, sigma)`; `x` must be sorted ascending.
pub fn fit_gpd(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt() as usize;
    let xstar = x[((n as f64 / 4.0 + 0.5).floor() as usize).clamp(1, n) - 1];
    let xmax = x[n - 1];
    let theta: Vec<f64> =
        (1..=m).map(|j| 1.0 / xmax + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar).collect();
    let prof: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|&v| (-t * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp(&prof);
    let theta_hat: f64 = theta.iter().zip(&prof).map(|(t, l)| t * (l - lse).exp()).filter(|v| v.is_finite()).sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    // Shrink towards 0.5 for small tails.
    let k = (n as f64 * k + 10.0 * 0.5) / (n as f64 + 10.0);
    (k, sigma)
}

fn qgpd(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Smooth log importance ratios in place of their largest `M` values.
/// Returns the smoothed log weights and the tail shape k̂.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let m = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    if m < 5 || m >= s || !max.is_finite() {
        return (log_ratios.to_vec(), f64::INFINITY);
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail = &order[s - m..];
    let cutoff = lw[order[s - m - 1]];
    let exceed: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - cutoff.exp()).collect();
    if exceed.iter().all(|&e| e <= 0.0) {
        return (log_ratios.to_vec(), 0.0);
    }
    let (k, sigma) = fit_gpd(&exceed);
    let mut out = log_ratios.to_vec();
    if k.is_finite() && sigma.is_finite() && sigma > 0.0 {
        for (r, &i) in tail.iter().enumerate() {
            let p = (r as f64 + 0.5) / m as f64;
            out[i] = (qgpd(p, k, sigma) + cutoff.exp()).ln().min(0.0) + max;
        }
    }
    (out, if k.is_finite() { k } else { f64::INFINITY })
}

/// Multivariate Student-t proposal fitted to a cloud of points.
struct TProposal {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
    inv: DMatrix<f64>,
    df: f64,
}

impl TProposal {
    fn fit(points: &[Vec<f64>], df: f64, inflate: f64) -> Self {
        let d = points[0].len();
        let n = points.len() as f64;
        let mut mean = DVector::zeros(d);
        for p in points {
            mean += DVector::from_column_slice(p);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for p in points {
            let c = DVector::from_column_slice(p) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1.0).max(1.0);
        cov *= inflate * inflate;
        let mut jitter = 1e-8;
        let chol = loop {
            let mut c = cov.clone();
            for i in 0..d {
                c[(i, i)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                break ch;
            }
            jitter *= 10.0;
        };
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let dd = d as f64;
        let log_norm = statrs::function::gamma::ln_gamma((df + dd) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * dd * (df * std::f64::consts::PI).ln()
            - 0.5 * log_det;
        Self { mean, inv: chol.inverse(), chol: l, log_norm, df }
    }

    fn sample(&self, rng: &mut crate::SimRng) -> Vec<f64> {
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let w: f64 = ChiSquared::new(self.df).unwrap().sample(rng);
        let v = &self.mean + &self.chol * z / (w / self.df).sqrt();
        v.iter().copied().collect()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let c = DVector::from_column_slice(u) - &self.mean;
        let q = (c.transpose() * &self.inv * &c)[(0, 0)];
        self.log_norm - 0.5 * (self.df + self.mean.len() as f64) * (q / self.df).ln_1p()
    }
}

fn marginal_logliks(post: &HierPosterior, s: usize, subj: &SubjectData, cfg: &LooConfig) -> Vec<f64> {
    let model = post.model;
    let params = &post.prior.params;
    let n_draws = post.n_draws();
    let u_draws: Vec<Vec<f64>> =
        (0..n_draws).map(|m| post.subject_draw(s, m).iter().zip(params).map(|(&x, p)| p.to_u(x)).collect()).collect();
    let prop = TProposal::fit(&u_draws, cfg.proposal_df, cfg.proposal_inflate);
    let mut rng = rng::stream(cfg.seed, &[tags::LOO_PROPOSAL, s as u64]);
    let j = cfg.proposal_draws;
    // Per proposal point: x, and ll + log|J| − log q.
    let mut xs = Vec::with_capacity(j);
    let mut base = Vec::with_capacity(j);
    for _ in 0..j {
        let u = prop.sample(&mut rng);
        let x: Vec<f64> = u.iter().zip(params).map(|(&v, p)| p.from_u(v)).collect();
        let jac: f64 = u.iter().zip(params).map(|(&v, p)| p.log_jac(v)).sum();
        let ll = subj.loglik(model, &x);
        let b = ll + jac - prop.log_density(&u);
        base.push(if b.is_nan() { f64::NEG_INFINITY } else { b });
        xs.push(x);
    }
    let ln_j = (j as f64).ln();
    let mut terms = vec![0.0; j];
    (0..n_draws)
        .map(|m| {
            let (mu, sigma) = post.group_draw(m);
            for i in 0..j {
                terms[i] = base[i] + post.prior.log_subject(&xs[i], &mu, &sigma);
            }
            log_sum_exp(&terms) - ln_j
        })
        .collect()
}

/// One `pareto_k_high` warning per subject above the threshold.
pub fn k_warnings(subjects: &[SubjectLoo]) -> Vec<String> {
    subjects
        .iter()
        .filter(|s| s.k_hat > K_WARN)
        .map(|s| format!("pareto_k_high: subject {} k̂ = {:.2}", s.id, s.k_hat))
        .collect()
}

/// Leave-one-subject-out predictive accuracy of a fitted posterior.
pub fn psis_loo(post: &HierPosterior, dataset: &Dataset, cfg: &LooConfig) -> Result<LooReport, EstimError> {
    let n_draws = post.n_draws();
    if n_draws < MIN_DRAWS {
        return Err(EstimError::TooFewDraws { needed: MIN_DRAWS, found: n_draws });
    }
    let subjects = prepare(dataset, post.model, &post.learner)?;
    let ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
    if ids != post.subject_ids.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(EstimError::Config("dataset subjects differ from the fitted posterior".into()));
    }
    let model = post.model;
    let per_subject: Vec<SubjectLoo> = subjects
        .par_iter()
        .enumerate()
        .map(|(s, subj)| {
            let ll: Vec<f64> = match cfg.unit {
                LooUnit::Conditional => (0..n_draws).map(|m| post.subject_loglik(s, m)).collect(),
                LooUnit::Marginal => marginal_logliks(post, s, subj, cfg),
            };
            let neg: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_smooth(&neg);
            let num: Vec<f64> = lw.iter().zip(&ll).map(|(a, b)| a + b).collect();
            let elpd = log_sum_exp(&num) - log_sum_exp(&lw);
            SubjectLoo { id: subj.id.clone(), elpd, k_hat: k, n_choices: subj.n_scored(model) }
        })
        .collect();
    let warnings = k_warnings(&per_subject);
    let elpd: f64 = per_subject.iter().map(|s| s.elpd).sum();
    let n = per_subject.len() as f64;
    let vals: Vec<f64> = per_subject.iter().map(|s| s.elpd).collect();
    let se = (n * crate::special::sample_var(&vals)).sqrt();
    let n_choices: usize = per_subject.iter().map(|s| s.n_choices).sum();
    Ok(LooReport {
        model,
        unit: cfg.unit,
        subjects: per_subject,
        elpd,
        se,
        n_choices,
        elpd_normalized: elpd / n_choices as f64,
        n_draws,
        warnings,
        config: cfg.clone(),
    })
}
