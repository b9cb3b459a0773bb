//! Fitting at a fixed `(K, G)` and the full select-then-fit workflow.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DataMatrix, Hyperparameters};
use crate::sampler::{point_estimates, run_chain, PointEstimates, SamplerConfig};
use crate::seed::derive_seed;
use crate::select::fa::{fit_standard_fa_with, FaWorkspace};
use crate::select::init::{initial_state_from_fit, initialize_kg_with, InitSelection, FA_MAX_ITER, FA_TOL};
use crate::select::{compute_criteria, greedy_search_with, ModelScore, MomentScale, SearchOptions, SearchOutcome};

#[derive(Debug, Clone)]
pub struct FitResult {
    pub k: usize,
    pub g: usize,
    pub estimates: PointEstimates,
    pub score: ModelScore,
    pub loglik_trace: Vec<f64>,
    pub acceptance_rate: f64,
    /// Seed the chain actually used.
    pub chain_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub scale: MomentScale,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            scale: MomentScale::Log,
        }
    }
}

/// Seed of the chain at `(K, G)` for a run seeded with `base`.
pub fn chain_seed(base: u64, k: usize, g: usize) -> u64 {
    derive_seed(base, &[k as u64, g as u64])
}

/// Starts from standard factor analysis and runs one chain at `(K, G)`.
pub fn fit_model(
    data: &DataMatrix,
    k: usize,
    g: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
) -> Result<FitResult> {
    let ws = FaWorkspace::new(data)?;
    fit_model_with(&ws, data, k, g, hyper, config, FitOptions::default())
}

pub fn fit_model_with(
    ws: &FaWorkspace,
    data: &DataMatrix,
    k: usize,
    g: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    opts: FitOptions,
) -> Result<FitResult> {
    let p = data.p();
    if k == 0 || k >= p || g == 0 || g > p {
        return Err(Error::Usage(format!(
            "(K = {k}, G = {g}) is not admissible for p = {p}; need 1 <= K < p and 1 <= G <= p"
        )));
    }
    let seed = chain_seed(config.seed, k, g);
    let fa = fit_standard_fa_with(ws, k, FA_MAX_ITER, FA_TOL)?;
    let init = initial_state_from_fit(data, &fa, k, g, seed)?;
    let cfg = SamplerConfig { seed, ..config.clone() };
    let trace = run_chain(data, k, g, hyper, &cfg, init)?;
    let estimates = point_estimates(&trace)?;
    let score = compute_criteria(&trace, data.n(), k, g, opts.scale)
        .ok_or_else(|| Error::Usage("chain kept no draws".into()))?;
    Ok(FitResult {
        k,
        g,
        estimates,
        score,
        acceptance_rate: trace.acceptance_rate(),
        loglik_trace: trace.loglik_trace,
        chain_seed: seed,
    })
}

/// Greedy search around `(k0, g0)` with chains seeded per configuration.
pub fn greedy_search(
    data: &DataMatrix,
    k0: usize,
    g0: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    opts: &SearchOptions,
) -> Result<SearchOutcome<FitResult>> {
    let ws = FaWorkspace::new(data)?;
    search_from(&ws, data, k0, g0, hyper, config, opts, FitOptions::default())
}

#[allow(clippy::too_many_arguments)]
fn search_from(
    ws: &FaWorkspace,
    data: &DataMatrix,
    k0: usize,
    g0: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    opts: &SearchOptions,
    fit_opts: FitOptions,
) -> Result<SearchOutcome<FitResult>> {
    let p = data.p();
    let bounded = SearchOptions {
        k_limit: Some(opts.k_limit.unwrap_or(usize::MAX).min(p - 1)),
        g_limit: Some(opts.g_limit.unwrap_or(usize::MAX).min(p)),
        ..opts.clone()
    };
    greedy_search_with(k0.min(p - 1), g0.min(p), &bounded, |k, g| {
        let fit = fit_model_with(ws, data, k, g, hyper, config, fit_opts)?;
        let score = fit.score.clone();
        Ok((fit, score))
    })
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub init: InitSelection,
    pub search: SearchOutcome<FitResult>,
}

/// Initialization followed by greedy search.
pub fn analyze_data(
    data: &DataMatrix,
    k_max: usize,
    g_max: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    opts: &SearchOptions,
    fit_opts: FitOptions,
) -> Result<Analysis> {
    let ws = FaWorkspace::new(data)?;
    let init = initialize_kg_with(&ws, k_max, g_max)?;
    let search = search_from(&ws, data, init.k, init.g, hyper, config, opts, fit_opts)?;
    Ok(Analysis { init, search })
}
