//! Hierarchical priors and coordinate transforms.

use crate::choice::Model;
use crate::special::{log_norm_cdf, log_normal_pdf, logistic, softplus};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPrior {
    pub name: String,
    /// Support of the group mean and of subject values; `None` is an
    /// improper flat prior on the real line.
    pub bounds: Option<(f64, f64)>,
}

impl ParamPrior {
    pub fn bounded(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), bounds: Some((lo, hi)) }
    }

    pub fn flat(name: &str) -> Self {
        Self { name: name.into(), bounds: None }
    }

    pub fn inside(&self, x: f64) -> bool {
        match self.bounds {
            Some((lo, hi)) => x > lo && x < hi,
            None => x.is_finite(),
        }
    }

    /// Unconstrained coordinate of `x` (logit for bounded, identity otherwise).
    pub fn to_u(&self, x: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
            None => x,
        }
    }

    pub fn from_u(&self, u: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => lo + (hi - lo) * logistic(u),
            None => u,
        }
    }

    /// `ln |dx/du|`.
    pub fn log_jac(&self, u: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => (hi - lo).ln() - softplus(-u) - softplus(u),
            None => 0.0,
        }
    }

    /// Log density of a subject value under N(μ, σ²) truncated to the bounds.
    pub fn log_subject_density(&self, x: f64, mu: f64, sigma: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => {
                if !(x >= lo && x <= hi) {
                    return f64::NEG_INFINITY;
                }
                log_normal_pdf(x, mu, sigma) - log_mass(lo, hi, mu, sigma)
            }
            None => log_normal_pdf(x, mu, sigma),
        }
    }

    /// Log normaliser of the truncated normal (0 when unbounded).
    pub fn log_normaliser(&self, mu: f64, sigma: f64) -> f64 {
        match self.bounds {
            Some((lo, hi)) => log_mass(lo, hi, mu, sigma),
            None => 0.0,
        }
    }
}

/// `ln(Φ(b) − Φ(a))` for a = (lo − μ)/σ, b = (hi − μ)/σ, stable in both tails.
pub fn log_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    let (mut a, mut b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    if a > 0.0 {
        // Reflect into the left tail where Φ is accurate.
        (a, b) = (-b, -a);
    }
    let lb = log_norm_cdf(b);
    let la = log_norm_cdf(a);
    lb + (-(la - lb).exp()).ln_1p()
}

/// Half-Cauchy(0, scale) log density.
pub fn log_half_cauchy(sigma: f64, scale: f64) -> f64 {
    if sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / PI).ln() - scale.ln() - (1.0 + (sigma / scale).powi(2)).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierPrior {
    pub params: Vec<ParamPrior>,
    /// Scale of the half-Cauchy prior on every group SD.
    #[serde(default = "one")]
    pub sigma_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl HierPrior {
    pub fn preset(model: Model) -> Self {
        let params = match model {
            Model::Sm1 => vec![ParamPrior::bounded("beta", 0.0, 10.0)],
            Model::Sm2 => vec![ParamPrior::bounded("beta", 0.0, 10.0), ParamPrior::flat("phi")],
            Model::Sm3 => vec![ParamPrior::bounded("beta", 0.0, 10.0), ParamPrior::flat("phi"), ParamPrior::flat("rho")],
            Model::Probit => vec![
                ParamPrior::bounded("w1", 0.0, 5.0),
                ParamPrior::bounded("w2", -1.0, 5.0),
                ParamPrior::bounded("w3", -1.0, 5.0),
            ],
            Model::Qcare => vec![ParamPrior::bounded("alpha", 0.0, 3.0)],
        };
        Self { params, sigma_scale: 1.0 }
    }

    pub fn validate(&self, model: Model) -> Result<(), String> {
        if self.params.len() != model.n_params() {
            return Err(format!("{model} needs {} prior entries, got {}", model.n_params(), self.params.len()));
        }
        for p in &self.params {
            if let Some((lo, hi)) = p.bounds {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(format!("{}: bounds [{lo}, {hi}] invalid", p.name));
                }
            }
        }
        if !(self.sigma_scale > 0.0) {
            return Err("sigma_scale must be positive".into());
        }
        Ok(())
    }

    /// `Σ_j ln TN(x_j | μ_j, σ_j)`.
    pub fn log_subject(&self, x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
        self.params.iter().enumerate().map(|(j, p)| p.log_subject_density(x[j], mu[j], sigma[j])).sum()
    }
}
