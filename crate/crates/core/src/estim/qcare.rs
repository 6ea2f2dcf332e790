//! Per-subject maximum-likelihood fits of the QCARE exploration rate α.

use super::optim::golden_section;
use super::{prepare, EstimError, SubjectData};
use crate::choice::Model;
use crate::domain::Dataset;
use crate::learner::LearnerConfig;
use crate::special::{mean, sample_var};
use serde::{Deserialize, Serialize};

pub const ALPHA_MAX: f64 = 3.0;
const GRID: usize = 21;
const EDGE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcareFlag {
    /// Estimate at α = 0; kept in the group mean.
    LowerBound,
    /// Estimate at the upper search limit; excluded.
    UpperBound,
    /// No round where both arms had been sampled; excluded.
    NoData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcareSubject {
    pub id: String,
    pub alpha: f64,
    pub loglik: f64,
    pub n_rounds: usize,
    pub flag: Option<QcareFlag>,
}

impl QcareSubject {
    pub fn included(&self) -> bool {
        !matches!(self.flag, Some(QcareFlag::UpperBound | QcareFlag::NoData))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcareReport {
    pub subjects: Vec<QcareSubject>,
    /// Mean and SD of the included per-subject estimates.
    pub group_mean: f64,
    pub group_sd: f64,
    pub n_included: usize,
    /// Single α maximising the likelihood summed over every subject with data.
    pub pooled_alpha: f64,
    /// α at which exploration decays at the balanced rate.
    pub reference_alpha: f64,
    pub method: String,
}

fn argmax_alpha(ll: impl Fn(f64) -> f64) -> (f64, f64) {
    let nll = |a: f64| {
        let v = -ll(a);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let grid: Vec<f64> = (0..GRID).map(|i| ALPHA_MAX * i as f64 / (GRID - 1) as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&a| nll(a)).collect();
    let best = (0..GRID).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID - 1)];
    let (mut alpha, mut v) = golden_section(nll, lo, hi, 1e-6);
    if vals[best] < v {
        (alpha, v) = (grid[best], vals[best]);
    }
    (alpha, -v)
}

pub fn qcare_subject(subj: &SubjectData) -> QcareSubject {
    let n_rounds = subj.n_scored(Model::Qcare);
    if n_rounds == 0 {
        return QcareSubject { id: subj.id.clone(), alpha: f64::NAN, loglik: 0.0, n_rounds, flag: Some(QcareFlag::NoData) };
    }
    let (alpha, loglik) = argmax_alpha(|a| subj.loglik(Model::Qcare, &[a]));
    let flag = if alpha >= ALPHA_MAX - EDGE {
        Some(QcareFlag::UpperBound)
    } else if alpha <= EDGE {
        Some(QcareFlag::LowerBound)
    } else {
        None
    };
    QcareSubject { id: subj.id.clone(), alpha, loglik, n_rounds, flag }
}

/// α̂ per subject on two-armed data with the group mean over included subjects.
pub fn fit_qcare(dataset: &Dataset) -> Result<QcareReport, EstimError> {
    let learner = LearnerConfig::for_spec(&dataset.env_spec);
    let subjects = prepare(dataset, Model::Qcare, &learner)?;
    let fits: Vec<QcareSubject> = subjects.iter().map(qcare_subject).collect();
    let kept: Vec<f64> = fits.iter().filter(|f| f.included()).map(|f| f.alpha).collect();
    let with_data: Vec<&SubjectData> = subjects.iter().filter(|s| s.n_scored(Model::Qcare) > 0).collect();
    let pooled_alpha = if with_data.is_empty() {
        f64::NAN
    } else {
        argmax_alpha(|a| with_data.iter().map(|s| s.loglik(Model::Qcare, &[a])).sum()).0
    };
    Ok(QcareReport {
        pooled_alpha,
        group_mean: if kept.is_empty() { f64::NAN } else { mean(&kept) },
        group_sd: sample_var(&kept).sqrt(),
        n_included: kept.len(),
        subjects: fits,
        reference_alpha: 0.5,
        method: format!("per-subject maximum likelihood over α ∈ [0, {ALPHA_MAX}], {GRID}-point grid then golden-section"),
    })
}
