//! Estimation of choice-model parameters: hierarchical MCMC, MAP fits,
//! PSIS-LOO comparison, QCARE α fits and the recovery harness.

mod diag;
mod hier;
mod loo;
pub mod optim;
mod prior;
mod qcare;
mod recovery;

pub use diag::{ess, split_rhat, Diagnostic};
pub use hier::{fit_hier, map_fit, HierPosterior, MapFit, McmcConfig, ParamSummary};
pub use loo::{fit_gpd, k_warnings, psis_loo, psis_smooth, LooConfig, LooReport, LooUnit, SubjectLoo};
pub use prior::{log_half_cauchy, log_mass, HierPrior, ParamPrior};
pub use qcare::{fit_qcare, qcare_subject, QcareFlag, QcareReport, QcareSubject};
pub use recovery::{recover, simulate_subjects, RecoveryCheck, RecoveryPreset, RecoveryReport};

use crate::choice::{ChoiceError, Model, PreparedTrial};
use crate::domain::Dataset;
use crate::learner::LearnerConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimError {
    #[error("dataset has no trajectories")]
    EmptyDataset,
    #[error("subject `{0}` has no scored choices")]
    EmptySubject(String),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error("likelihood undefined at every initial point after {attempts} attempts")]
    InitFailed { attempts: usize },
    #[error("sampled {param} = {value} exceeds the runaway threshold")]
    Runaway { param: String, value: f64 },
    #[error("need at least {needed} posterior draws, have {found}")]
    TooFewDraws { needed: usize, found: usize },
    #[error("{model} is defined for two-armed data only")]
    WrongVariant { model: Model },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// All trials of one subject with their learner traces precomputed.
#[derive(Clone, Debug)]
pub struct SubjectData {
    pub id: String,
    pub trials: Vec<PreparedTrial>,
}

impl SubjectData {
    pub fn loglik(&self, model: Model, x: &[f64]) -> f64 {
        self.trials.iter().map(|t| t.loglik(model, x)).sum()
    }

    /// Number of choices the model scores for this subject.
    pub fn n_scored(&self, model: Model) -> usize {
        self.trials.iter().map(|t| if model == Model::Qcare { t.qcare_len() } else { t.len() }).sum()
    }
}

/// Group trajectories by subject (sorted by id) and run the learner once.
pub fn prepare(dataset: &Dataset, model: Model, learner: &LearnerConfig) -> Result<Vec<SubjectData>, EstimError> {
    if dataset.is_empty() {
        return Err(EstimError::EmptyDataset);
    }
    let n_arms = dataset.env_spec.n_arms;
    if model.two_armed_only() && n_arms != 2 {
        return Err(EstimError::WrongVariant { model });
    }
    dataset
        .subjects()
        .into_iter()
        .map(|(id, idx)| {
            let trials = idx
                .iter()
                .map(|&i| PreparedTrial::new(&dataset.trajectories[i], n_arms, learner))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SubjectData { id: id.to_string(), trials })
        })
        .collect()
}
