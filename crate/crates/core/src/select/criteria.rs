//! Information criteria computed from MCMC log-likelihood draws.

use serde::{Deserialize, Serialize};

use crate::model::clustered_param_count;
use crate::sampler::ChainTrace;

/// Scale on which the sample mean and variance of the draws are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentScale {
    /// Moments of the log-likelihood values.
    #[default]
    Log,
    /// Moments of the likelihood values themselves, then logged (computed stably).
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub k: usize,
    pub g: usize,
    pub bic: Option<f64>,
    pub bicm: Option<f64>,
    pub aicm: Option<f64>,
    pub bic_mcmc: Option<f64>,
}

impl ModelScore {
    pub fn has_any(&self) -> bool {
        self.bic.is_some() || self.bicm.is_some() || self.aicm.is_some() || self.bic_mcmc.is_some()
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + (v.iter().map(|x| (x - max).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// `(log L̄, s²)` for the chosen scale. `s²` uses the `n − 1` divisor.
fn moments(logliks: &[f64], scale: MomentScale) -> (f64, f64) {
    let m = logliks.len() as f64;
    match scale {
        MomentScale::Log => {
            // shifted by the first draw so a constant trace gives its value exactly
            let shift = logliks[0];
            let mean = shift + logliks.iter().map(|l| l - shift).sum::<f64>() / m;
            let var = logliks.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (mean, var)
        }
        MomentScale::Likelihood => {
            // variance of exp(l) relative to exp(max)²; the result is on the
            // likelihood scale and is typically astronomically large or zero
            let max = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_mean = log_mean_exp(logliks);
            let scaled_mean = (log_mean - max).exp();
            let var = logliks
                .iter()
                .map(|l| ((l - max).exp() - scaled_mean).powi(2))
                .sum::<f64>()
                / (m - 1.0);
            (log_mean, var * (2.0 * max).exp())
        }
    }
}

/// Criteria from a vector of retained log-likelihood draws. Returns `None` for an
/// empty vector; AICM and BICM need at least two draws.
pub fn criteria_from_logliks(
    logliks: &[f64],
    n: usize,
    k: usize,
    g: usize,
    p: usize,
    scale: MomentScale,
) -> Option<ModelScore> {
    criteria_with_log_n(logliks, (n as f64).ln(), k, g, p, scale)
}

pub(crate) fn criteria_with_log_n(
    logliks: &[f64],
    ln_n: f64,
    k: usize,
    g: usize,
    p: usize,
    scale: MomentScale,
) -> Option<ModelScore> {
    if logliks.is_empty() {
        return None;
    }
    let l_max = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nu = clustered_param_count(g, k, p) as f64;
    let bic_mcmc = Some(2.0 * l_max - nu * ln_n);
    let (bicm, aicm) = if logliks.len() >= 2 {
        let (log_mean, var) = moments(logliks, scale);
        (Some(2.0 * l_max - 2.0 * var * ln_n), Some(2.0 * log_mean - 2.0 * var))
    } else {
        (None, None)
    };
    Some(ModelScore {
        k,
        g,
        bic: None,
        bicm,
        aicm,
        bic_mcmc,
    })
}

/// Criteria from the retained draws of a chain on data with `n` rows.
pub fn compute_criteria(trace: &ChainTrace, n: usize, k: usize, g: usize, scale: MomentScale) -> Option<ModelScore> {
    let p = trace.final_state.psi.len();
    criteria_from_logliks(&trace.kept_logliks(), n, k, g, p, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_trace() {
        let s = criteria_from_logliks(&[-4.0; 5], 10, 1, 1, 2, MomentScale::Log).unwrap();
        assert_eq!(s.bicm, Some(-8.0));
        assert_eq!(s.aicm, Some(-8.0));
    }

    #[test]
    fn hand_trace() {
        // K = 1, G = 2, p = 5 gives ν = 7; n = e makes ln n = 1
        let s = criteria_with_log_n(&[-10.0, -12.0], 1.0, 1, 2, 5, MomentScale::Log).unwrap();
        assert_eq!(s.aicm, Some(-26.0));
        assert_eq!(s.bic_mcmc, Some(-27.0));
        assert_eq!(s.bicm, Some(-24.0));
        let s20 = criteria_from_logliks(&[-10.0, -12.0], 20, 1, 2, 5, MomentScale::Log).unwrap();
        assert!((s20.bic_mcmc.unwrap() - (-20.0 - 7.0 * 20f64.ln())).abs() < 1e-12);
        assert!((s20.bicm.unwrap() - (-20.0 - 4.0 * 20f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn bic_mcmc_decreases_in_nu() {
        let l = [-3.0, -2.5, -4.0];
        let a = criteria_from_logliks(&l, 50, 2, 2, 6, MomentScale::Log).unwrap();
        let b = criteria_from_logliks(&l, 50, 2, 3, 6, MomentScale::Log).unwrap();
        assert!(b.bic_mcmc < a.bic_mcmc);
    }

    #[test]
    fn single_draw_has_only_bic_mcmc() {
        let s = criteria_from_logliks(&[-1.0], 5, 1, 1, 2, MomentScale::Log).unwrap();
        assert!(s.bicm.is_none() && s.aicm.is_none());
        assert!(s.bic_mcmc.is_some() && s.has_any());
        assert!(criteria_from_logliks(&[], 5, 1, 1, 2, MomentScale::Log).is_none());
    }

    #[test]
    fn likelihood_scale_moments() {
        let l = [0.0, 2f64.ln()];
        let s = criteria_from_logliks(&l, 1, 1, 1, 1, MomentScale::Likelihood).unwrap();
        // mean of {1, 2} is 1.5, variance 0.5
        assert!((s.aicm.unwrap() - (2.0 * 1.5f64.ln() - 1.0)).abs() < 1e-12);
    }
}
