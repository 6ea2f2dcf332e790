//! Split-chain R-hat and effective sample size.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rhat: f64,
    pub ess: f64,
}

impl Diagnostic {
    pub fn of(chains: &[Vec<f64>]) -> Self {
        Self { rhat: split_rhat(chains), ess: ess(chains) }
    }
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    chains.iter().flat_map(|c| [&c[..n], &c[n..2 * n]]).collect()
}

struct Moments {
    n: usize,
    means: Vec<f64>,
    w: f64,
    var_plus: f64,
}

fn moments(parts: &[&[f64]]) -> Option<Moments> {
    let m = parts.len();
    let n = parts.first()?.len();
    if m < 2 || n < 2 {
        return None;
    }
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    Some(Moments { n, means, w, var_plus })
}

/// Potential scale reduction over split chains; 1 for constant draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let Some(mo) = moments(&parts) else { return f64::NAN };
    if mo.w <= 0.0 {
        let same = mo.means.windows(2).all(|p| p[0] == p[1]);
        return if same { 1.0 } else { f64::INFINITY };
    }
    (mo.var_plus / mo.w).sqrt()
}

/// Effective sample size with Geyer's initial positive sequence over
/// split chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let Some(mo) = moments(&parts) else { return f64::NAN };
    let total = (mo.n * parts.len()) as f64;
    if mo.w <= 0.0 {
        return total;
    }
    let n = mo.n;
    let autocov = |lag: usize| -> f64 {
        parts
            .iter()
            .zip(&mo.means)
            .map(|(p, mu)| (0..n - lag).map(|i| (p[i] - mu) * (p[i + lag] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / parts.len() as f64
    };
    let rho = |lag: usize| 1.0 - (mo.w - autocov(lag)) / mo.var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        // Monotone sequence estimator.
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        sum += pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10().max(1.0));
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(seed: u64, phi: f64, n: usize, shift: f64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[]);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut r);
                x = phi * x + e;
                x + shift
            })
            .collect()
    }

    #[test]
    fn iid_chains() {
        let chains: Vec<_> = (0..4).map(|s| ar1(s, 0.0, 1000, 0.0)).collect();
        let d = Diagnostic::of(&chains);
        assert!((d.rhat - 1.0).abs() < 0.01, "{d:?}");
        assert!(d.ess > 3000.0 && d.ess < 5500.0, "{d:?}");
    }

    #[test]
    fn autocorrelated_ess() {
        // Integrated autocorrelation time of AR(1) is (1 + φ)/(1 − φ) = 19.
        let chains: Vec<_> = (0..4).map(|s| ar1(10 + s, 0.9, 5000, 0.0)).collect();
        let e = ess(&chains);
        assert!(e > 20000.0 / 19.0 * 0.7 && e < 20000.0 / 19.0 * 1.4, "{e}");
    }

    #[test]
    fn separated_chains_flagged() {
        let chains: Vec<_> = (0..4).map(|s| ar1(20 + s, 0.0, 500, s as f64 * 3.0)).collect();
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn trending_chain_flagged_by_split() {
        let chains = vec![(0..1000).map(|i| i as f64 / 100.0).collect::<Vec<_>>()];
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn constant_draws() {
        let chains = vec![vec![2.0; 100]; 4];
        assert_eq!(split_rhat(&chains), 1.0);
        assert_eq!(ess(&chains), 400.0);
    }
}
