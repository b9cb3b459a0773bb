use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::allocation::propose_allocation_move;
use super::conditionals::{sample_cluster_loadings, sample_scores, sample_uniquenesses};
use crate::error::{Error, Result};
use crate::model::{log_prior, ClusterLoadings, DataMatrix, Hyperparameters, Partition, SamplerState};

/// Chain length, thinning and move settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Allocation-move attempts per sweep; `None` means `ceil(p / 10)`.
    pub moves_per_sweep: Option<usize>,
    pub distance_epsilon: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            burn_in: 1000,
            thin: 4,
            seed: 1,
            moves_per_sweep: None,
            distance_epsilon: 1e-8,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if self.distance_epsilon.is_nan() || self.distance_epsilon <= 0.0 {
            return Err(Error::Config("distance_epsilon must be positive".into()));
        }
        if self.moves_per_sweep == Some(0) {
            return Err(Error::Config("moves_per_sweep must be positive".into()));
        }
        if self.n_iter == 0 {
            // an empty run is allowed and leaves the initial state untouched
            return Ok(());
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin > self.n_iter - self.burn_in {
            return Err(Error::Config(format!(
                "thin ({}) exceeds the post-burn-in length ({})",
                self.thin,
                self.n_iter - self.burn_in
            )));
        }
        Ok(())
    }

    pub fn moves_for(&self, p: usize) -> usize {
        self.moves_per_sweep.unwrap_or_else(|| p.div_ceil(10).max(1))
    }

    /// Number of retained draws.
    pub fn kept_draws(&self) -> usize {
        if self.n_iter == 0 {
            0
        } else {
            (self.n_iter - self.burn_in).div_ceil(self.thin)
        }
    }
}

/// A retained draw. Scores are dropped to keep traces small.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub loadings: ClusterLoadings,
    pub psi: DVector<f64>,
    pub partition: Partition,
    pub loglik: f64,
    pub log_posterior: f64,
}

#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub draws: Vec<Draw>,
    /// Log-likelihood after every sweep, burn-in included.
    pub loglik_trace: Vec<f64>,
    pub accept_count: usize,
    pub attempt_count: usize,
    pub final_state: SamplerState,
    pub config: SamplerConfig,
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempt_count == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.attempt_count as f64
        }
    }

    /// Log-likelihoods of the retained draws.
    pub fn kept_logliks(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.loglik).collect()
    }

    pub fn n_factors(&self) -> usize {
        self.final_state.n_factors()
    }

    pub fn n_clusters(&self) -> usize {
        self.final_state.n_clusters()
    }
}

/// Runs one Metropolis-within-Gibbs chain. Each sweep updates `U`, then `Λ_c`,
/// then `Ψ`, then makes the configured number of allocation-move attempts.
pub fn run_chain(
    data: &DataMatrix,
    k: usize,
    g: usize,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    init: SamplerState,
) -> Result<ChainTrace> {
    config.validate()?;
    if init.n_factors() != k || init.n_clusters() != g {
        return Err(Error::Config(format!(
            "initial state is (K={}, G={}) but the chain was asked for (K={k}, G={g})",
            init.n_factors(),
            init.n_clusters()
        )));
    }
    if !data.is_centered() {
        return Err(Error::InvalidInput("data must be centered before sampling".into()));
    }
    let mut state = init;
    // a stale cache would poison every incremental update
    state.refresh_loglik(data)?;
    let moves = if g >= 2 { config.moves_for(data.p()) } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = ChainTrace {
        draws: Vec::with_capacity(config.kept_draws()),
        loglik_trace: Vec::with_capacity(config.n_iter),
        accept_count: 0,
        attempt_count: 0,
        final_state: state.clone(),
        config: config.clone(),
    };

    for it in 0..config.n_iter {
        state.scores = sample_scores(data, &state.partition, &state.loadings, &state.psi, &mut rng)
            .map_err(|e| e.in_sweep(it, "factor scores"))?;
        state.loadings = sample_cluster_loadings(
            data,
            &state.partition,
            &state.scores,
            &state.psi,
            hyper.sigma_lambda,
            &mut rng,
        )
        .map_err(|e| e.in_sweep(it, "cluster loadings"))?;
        state.psi = sample_uniquenesses(
            data,
            &state.partition,
            &state.loadings,
            &state.scores,
            hyper.alpha,
            &hyper.beta,
            &mut rng,
        )
        .map_err(|e| e.in_sweep(it, "uniquenesses"))?;
        state
            .refresh_loglik(data)
            .map_err(|e| e.in_sweep(it, "log-likelihood"))?;
        for _ in 0..moves {
            let out = propose_allocation_move(&mut state, data, hyper, config.distance_epsilon, &mut rng)
                .map_err(|e| e.in_sweep(it, "allocation"))?;
            trace.attempt_count += 1;
            if out.accepted() {
                trace.accept_count += 1;
            }
        }
        trace.loglik_trace.push(state.loglik);
        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            let lp = log_prior(&state, hyper).map_err(|e| e.in_sweep(it, "log-prior"))?;
            trace.draws.push(Draw {
                iteration: it,
                loadings: state.loadings.clone(),
                psi: state.psi.vector().clone(),
                partition: state.partition.clone(),
                loglik: state.loglik,
                log_posterior: state.loglik + lp,
            });
        }
    }
    trace.final_state = state;
    Ok(trace)
}
