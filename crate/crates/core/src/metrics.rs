//! Model-free metrics: exploitation rate, Bayesian regret and realized regret.

use crate::domain::{Dataset, RewardGroup, Trajectory};
use crate::special::{mean, sample_var};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory {0} carries no true means")]
    MissingTrueMeans(usize),
    #[error("trajectory {trajectory} refers to unknown group {group}")]
    UnknownGroup { trajectory: usize, group: u32 },
    #[error("trajectory {trajectory} round {round} outside its group's horizon")]
    RoundOutOfRange { trajectory: usize, round: usize },
    #[error("no trajectories")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

/// Which rounds count and how unobserved arms are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploitRule {
    /// Every round counts. Unobserved arms carry an estimate of 0 and the
    /// chosen arm is exploitative iff its estimate is maximal (ties count).
    #[default]
    AllRounds,
    /// Rounds 1..K are skipped, the maximum runs over observed arms only and a
    /// chosen arm never observed before is non-exploitative.
    SkipWarmup,
}

impl ExploitRule {
    pub fn describe(self) -> &'static str {
        match self {
            ExploitRule::AllRounds => {
                "all rounds; estimate = running mean of observed rewards, 0 for unobserved arms; ties exploitative"
            }
            ExploitRule::SkipWarmup => {
                "rounds after the first K; max over observed arms; unobserved chosen arm non-exploitative; ties exploitative"
            }
        }
    }
}

/// Per-round exploitation flags of one trajectory; `None` for rounds the rule skips.
pub fn exploitation_flags(traj: &Trajectory, n_arms: usize, rule: ExploitRule) -> Vec<Option<bool>> {
    let mut sums = vec![0.0; n_arms];
    let mut counts = vec![0usize; n_arms];
    let mut out = Vec::with_capacity(traj.steps.len());
    for (i, s) in traj.steps.iter().enumerate() {
        let est = |k: usize| if counts[k] > 0 { sums[k] / counts[k] as f64 } else { 0.0 };
        let flag = match rule {
            ExploitRule::AllRounds => {
                let best = (0..n_arms).map(est).fold(f64::NEG_INFINITY, f64::max);
                Some(est(s.choice) >= best)
            }
            ExploitRule::SkipWarmup if i < n_arms => None,
            ExploitRule::SkipWarmup => {
                if counts[s.choice] == 0 {
                    Some(false)
                } else {
                    let best = (0..n_arms)
                        .filter(|&k| counts[k] > 0)
                        .map(est)
                        .fold(f64::NEG_INFINITY, f64::max);
                    Some(est(s.choice) >= best)
                }
            }
        };
        out.push(flag);
        sums[s.choice] += s.reward;
        counts[s.choice] += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitationReport {
    pub rule: ExploitRule,
    pub rule_description: String,
    pub overall: f64,
    /// SE of the per-trajectory rates.
    pub se: f64,
    pub rounds_counted: usize,
    /// `(τ, rate over rounds 1..=τ pooled across trajectories)`.
    pub windows: Vec<(usize, f64)>,
}

/// Pooled exploitation rate plus cumulative rates at each window end.
pub fn exploitation_rate(d: &Dataset, windows: &[usize], rule: ExploitRule) -> ExploitationReport {
    let k = d.env_spec.n_arms;
    let horizon = d.trajectories.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut hits = vec![0usize; horizon];
    let mut seen = vec![0usize; horizon];
    let mut per_traj = Vec::new();
    for t in &d.trajectories {
        let flags = exploitation_flags(t, k, rule);
        let (mut h, mut n) = (0usize, 0usize);
        for (i, f) in flags.into_iter().enumerate() {
            if let Some(f) = f {
                seen[i] += 1;
                hits[i] += f as usize;
                h += f as usize;
                n += 1;
            }
        }
        if n > 0 {
            per_traj.push(h as f64 / n as f64);
        }
    }
    let total_hits: usize = hits.iter().sum();
    let total: usize = seen.iter().sum();
    let rate = |h: usize, n: usize| if n == 0 { f64::NAN } else { h as f64 / n as f64 };
    let windows = windows
        .iter()
        .map(|&w| {
            let w_end = w.min(horizon);
            (w, rate(hits[..w_end].iter().sum(), seen[..w_end].iter().sum()))
        })
        .collect();
    let se = if per_traj.len() > 1 { (sample_var(&per_traj) / per_traj.len() as f64).sqrt() } else { 0.0 };
    ExploitationReport {
        rule,
        rule_description: rule.describe().into(),
        overall: rate(total_hits, total),
        se,
        rounds_counted: total,
        windows,
    }
}

/// Window ends 10, 20, … up to `horizon` (always including `horizon`).
pub fn default_windows(horizon: usize) -> Vec<usize> {
    let mut w: Vec<usize> = (1..=horizon / 10).map(|i| i * 10).collect();
    if w.last() != Some(&horizon) {
        w.push(horizon);
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub round: usize,
    pub mean: f64,
    pub se: f64,
    pub n_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub points: Vec<RegretPoint>,
}

impl RegretCurve {
    pub fn final_point(&self) -> Option<&RegretPoint> {
        self.points.last()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].mean >= w[0].mean)
    }

    fn from_cumulative(per_trial: Vec<Vec<f64>>) -> Self {
        let horizon = per_trial.iter().map(Vec::len).max().unwrap_or(0);
        let points = (0..horizon)
            .map(|t| {
                let vals: Vec<f64> = per_trial.iter().filter_map(|c| c.get(t).copied()).collect();
                let n = vals.len();
                let se = if n > 1 { (sample_var(&vals) / n as f64).sqrt() } else { 0.0 };
                RegretPoint { round: t + 1, mean: mean(&vals), se, n_trials: n }
            })
            .collect();
        Self { points }
    }
}

fn cumulate(increments: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    increments
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Cumulative `max_k μ_k − μ_{a_t}` averaged over trajectories.
pub fn bayes_regret(d: &Dataset) -> Result<RegretCurve, MetricsError> {
    if d.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_trial = d
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mu = t.true_means().ok_or(MetricsError::MissingTrueMeans(i))?;
            let best = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(cumulate(t.steps.iter().map(|s| best - mu[s.choice])))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(RegretCurve::from_cumulative(per_trial))
}

/// Cumulative `max_k r_{g,k,t} − r_{g,a_t,t}` averaged over trajectories.
pub fn realized_regret(d: &Dataset, groups: &[RewardGroup]) -> Result<RegretCurve, MetricsError> {
    if d.is_empty() {
        return Err(MetricsError::Empty);
    }
    let by_id: HashMap<u32, &RewardGroup> = groups.iter().map(|g| (g.group_id, g)).collect();
    let per_trial = d
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let gid = t.group_id().ok_or(MetricsError::UnknownGroup { trajectory: i, group: 0 })?;
            let g = by_id.get(&gid).ok_or(MetricsError::UnknownGroup { trajectory: i, group: gid })?;
            let inc = t
                .steps
                .iter()
                .map(|s| {
                    let best = g.best_reward(s.round);
                    let got = g.reward(s.choice, s.round);
                    match (best, got) {
                        (Some(b), Some(r)) => Ok(b - r),
                        _ => Err(MetricsError::RoundOutOfRange { trajectory: i, round: s.round }),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(cumulate(inc.into_iter()))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(RegretCurve::from_cumulative(per_trial))
}

/// Curve table with columns `x, <label>_mean, <label>_se, …`.
pub fn curves_csv(curves: &[(&str, &RegretCurve)]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string()];
    for (label, _) in curves {
        header.push(format!("{label}_mean"));
        header.push(format!("{label}_se"));
    }
    w.write_record(&header).map_err(|e| MetricsError::Csv(e.to_string()))?;
    let rows = curves.iter().map(|(_, c)| c.points.len()).max().unwrap_or(0);
    for t in 0..rows {
        let mut rec = vec![(t + 1).to_string()];
        for (_, c) in curves {
            match c.points.get(t) {
                Some(p) => {
                    rec.push(p.mean.to_string());
                    rec.push(p.se.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Csv(e.to_string()))
}

/// Window table with columns `x, <label>, …`.
pub fn windows_csv(reports: &[(&str, &ExploitationReport)]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string()];
    header.extend(reports.iter().map(|(l, _)| l.to_string()));
    w.write_record(&header).map_err(|e| MetricsError::Csv(e.to_string()))?;
    let rows = reports.iter().map(|(_, r)| r.windows.len()).max().unwrap_or(0);
    for i in 0..rows {
        let x = reports.iter().find_map(|(_, r)| r.windows.get(i).map(|w| w.0)).unwrap_or(0);
        let mut rec = vec![x.to_string()];
        rec.extend(reports.iter().map(|(_, r)| r.windows.get(i).map_or(String::new(), |w| w.1.to_string())));
        w.write_record(&rec).map_err(|e| MetricsError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Csv(e.to_string()))
}
