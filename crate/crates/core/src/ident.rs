//! Identifiability check: stack per-arm feature differences against the last
//! arm and test the design matrix for full column rank.

use crate::choice::{Model, PreparedTrial, ProbitFeatures};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("round {round} has {found} arms/features, expected {expected}")]
    Ragged { round: usize, expected: usize, found: usize },
    #[error("need at least two arms")]
    TooFewArms,
    #[error("{0} has no feature map")]
    Unsupported(Model),
}

/// Feature rows of one dataset slice.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureRows {
    /// `rounds[t][k]` is the feature vector of arm k at round t.
    PerArm(Vec<Vec<Vec<f64>>>),
    /// One already-differenced row per round.
    Single(Vec<Vec<f64>>),
}

impl FeatureRows {
    /// Softmax-family features `[Q_k, S_k, 1{a_{t−1} = k}]`, truncated to the
    /// model's parameter count; probit features `[V, RU, V/TU]`.
    pub fn from_prepared(trials: &[&PreparedTrial], model: Model) -> Result<Self, IdentError> {
        match model {
            Model::Sm1 | Model::Sm2 | Model::Sm3 => {
                let d = model.n_params();
                let mut rounds = Vec::new();
                for p in trials {
                    for t in 0..p.len() {
                        let q = p.q(t);
                        let sd = p.sd(t);
                        let prev = p.prev(t);
                        rounds.push(
                            (0..p.n_arms)
                                .map(|k| {
                                    let full = [q[k], sd[k], if prev == Some(k) { 1.0 } else { 0.0 }];
                                    full[..d].to_vec()
                                })
                                .collect(),
                        );
                    }
                }
                Ok(FeatureRows::PerArm(rounds))
            }
            Model::Probit => {
                let mut rows = Vec::new();
                for p in trials {
                    if p.n_arms != 2 {
                        return Err(IdentError::Ragged { round: 0, expected: 2, found: p.n_arms });
                    }
                    for t in 0..p.len() {
                        let f = ProbitFeatures::from_belief(p.q(t), p.sd(t));
                        let ratio = if f.tu > 0.0 { f.v / f.tu } else { 0.0 };
                        rows.push(vec![f.v, f.ru, ratio]);
                    }
                }
                Ok(FeatureRows::Single(rows))
            }
            Model::Qcare => Err(IdentError::Unsupported(model)),
        }
    }
}

/// Rows `I_{k,t} − I_{K,t}` for k = 1..K−1, stacked over t.
pub fn build_design(features: &FeatureRows) -> Result<DMatrix<f64>, IdentError> {
    match features {
        FeatureRows::Single(rows) => {
            let d = rows.first().map_or(0, Vec::len);
            for (t, r) in rows.iter().enumerate() {
                if r.len() != d {
                    return Err(IdentError::Ragged { round: t + 1, expected: d, found: r.len() });
                }
            }
            Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
        }
        FeatureRows::PerArm(rounds) => {
            let Some(first) = rounds.first() else {
                return Ok(DMatrix::zeros(0, 0));
            };
            let k = first.len();
            if k < 2 {
                return Err(IdentError::TooFewArms);
            }
            let d = first[0].len();
            let mut data = Vec::with_capacity(rounds.len() * (k - 1) * d);
            for (t, arms) in rounds.iter().enumerate() {
                if arms.len() != k {
                    return Err(IdentError::Ragged { round: t + 1, expected: k, found: arms.len() });
                }
                if let Some(bad) = arms.iter().find(|a| a.len() != d) {
                    return Err(IdentError::Ragged { round: t + 1, expected: d, found: bad.len() });
                }
                let base = &arms[k - 1];
                for arm in &arms[..k - 1] {
                    data.extend(arm.iter().zip(base).map(|(a, b)| a - b));
                }
            }
            Ok(DMatrix::from_row_slice(rounds.len() * (k - 1), d, &data))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub rank: usize,
    pub d: usize,
    pub full_rank: bool,
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
}

/// Numerical rank with tolerance `max(rows, d) · ε · σ_max`.
pub fn rank_check(m: &DMatrix<f64>, d: usize) -> RankReport {
    let mut sv: Vec<f64> = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        m.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let tolerance = m.nrows().max(d) as f64 * f64::EPSILON * smax;
    let rank = sv.iter().filter(|&&s| s > tolerance).count();
    RankReport { rank, d, full_rank: rank == d, singular_values: sv, tolerance }
}
