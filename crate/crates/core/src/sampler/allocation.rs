//! Metropolis–Hastings move on the variable allocation.
//!
//! A move picks a source cluster `g₁` uniformly, a destination `g₂ ≠ g₁` with
//! probability inversely proportional to the distance between their loading rows,
//! a block size `M ∈ {1..n_{g₁}}` with `P(M = m) ∝ 1/m`, and then `M` members of
//! `g₁` uniformly without replacement. Only `Z` changes, so the posterior ratio
//! reduces to the likelihood change of the moved columns plus the cohesion ratio.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{cluster_log_cohesion, DataMatrix, Hyperparameters, SamplerState};

/// What happened on one move attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum MoveOutcome {
    /// The drawn source cluster was empty; nothing was proposed.
    EmptySource { source: usize },
    Proposed {
        source: usize,
        target: usize,
        moved: Vec<usize>,
        log_ratio: f64,
        accepted: bool,
    },
}

impl MoveOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, MoveOutcome::Proposed { accepted: true, .. })
    }

    /// `log R`, or `-inf` for a move that failed before proposing.
    pub fn log_ratio(&self) -> f64 {
        match self {
            MoveOutcome::EmptySource { .. } => f64::NEG_INFINITY,
            MoveOutcome::Proposed { log_ratio, .. } => *log_ratio,
        }
    }
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|m| 1.0 / m as f64).sum()
}

/// Log of the allocation part of the proposal ratio `P(Z'→Z) / P(Z→Z')`:
///
/// `(H(n₁) / H(n₂ + M)) · n₁! n₂! / ((n₁ - M)! (n₂ + M)!)` with `H` the harmonic
/// number. Valid for `1 ≤ M ≤ n₁`, including the cluster-emptying case `M = n₁`.
pub fn log_proposal_ratio(n_source: usize, n_target: usize, m: usize) -> f64 {
    debug_assert!(m >= 1 && m <= n_source);
    let lf = |k: usize| ln_gamma(k as f64 + 1.0);
    harmonic(n_source).ln() - harmonic(n_target + m).ln() + lf(n_source) + lf(n_target)
        - lf(n_source - m)
        - lf(n_target + m)
}

/// Exact rational value of the same ratio.
pub fn proposal_ratio_exact(n_source: usize, n_target: usize, m: usize) -> Result<BigRational> {
    if m == 0 || m > n_source {
        return Err(Error::Usage(format!("block size {m} outside 1..={n_source}")));
    }
    let harmonic_exact = |n: usize| {
        (1..=n).fold(BigRational::zero(), |acc, k| {
            acc + BigRational::new(BigInt::one(), BigInt::from(k))
        })
    };
    let fact = |n: usize| (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k));
    let harmonic_part = harmonic_exact(n_source) / harmonic_exact(n_target + m);
    let fact_part = BigRational::new(fact(n_source) * fact(n_target), fact(n_source - m) * fact(n_target + m));
    Ok(harmonic_part * fact_part)
}

/// Inverse-distance weights for choosing a destination from `source`. Entry
/// `source` is zero.
pub(crate) fn destination_weights(state: &SamplerState, source: usize, distance_epsilon: f64) -> Vec<f64> {
    let lc = state.loadings.matrix();
    (0..lc.nrows())
        .map(|g| {
            if g == source {
                0.0
            } else {
                let d = (lc.row(source) - lc.row(g)).norm();
                1.0 / d.max(distance_epsilon)
            }
        })
        .collect()
}

/// Log-likelihood change from moving `moved` columns of cluster `source` into
/// `target`, touching only those columns.
pub(crate) fn moved_columns_loglik_delta(
    data: &DataMatrix,
    state: &SamplerState,
    source: usize,
    target: usize,
    moved: &[usize],
) -> f64 {
    let u = state.scores.matrix();
    let lc = state.loadings.matrix();
    let fit_src = u * lc.row(source).transpose();
    let fit_dst = u * lc.row(target).transpose();
    let x = data.values();
    let psi = state.psi.vector();
    moved
        .iter()
        .map(|&j| {
            let col = x.column(j);
            let (mut old, mut new) = (0.0, 0.0);
            for i in 0..col.len() {
                let a = col[i] - fit_src[i];
                let b = col[i] - fit_dst[i];
                old += a * a;
                new += b * b;
            }
            -0.5 * (new - old) / psi[j]
        })
        .sum()
}

/// One attempt of the block reallocation move. On acceptance the partition and the
/// cached log-likelihood of `state` are updated in place.
///
/// The acceptance ratio includes the destination-selection ratio
/// `S(g₁) / S(g₂)`, where `S(g) = Σ_{g' ≠ g} 1/d(g, g')`; it is 1 when `G = 2`.
pub fn propose_allocation_move<R: Rng + ?Sized>(
    state: &mut SamplerState,
    data: &DataMatrix,
    hyper: &Hyperparameters,
    distance_epsilon: f64,
    rng: &mut R,
) -> Result<MoveOutcome> {
    let g_count = state.partition.n_clusters();
    if g_count < 2 {
        return Err(Error::Config("allocation moves need at least two clusters".into()));
    }
    let source = rng.random_range(0..g_count);
    let n_source = state.partition.occupancy()[source];
    if n_source == 0 {
        return Ok(MoveOutcome::EmptySource { source });
    }

    let fwd_weights = destination_weights(state, source, distance_epsilon);
    let target = WeightedIndex::new(&fwd_weights)
        .map_err(|e| Error::Numeric(format!("destination weights: {e}")))?
        .sample(rng);
    debug_assert_ne!(target, source);
    let n_target = state.partition.occupancy()[target];

    let size_weights: Vec<f64> = (1..=n_source).map(|m| 1.0 / m as f64).collect();
    let m = WeightedIndex::new(&size_weights)
        .map_err(|e| Error::Numeric(format!("block size weights: {e}")))?
        .sample(rng)
        + 1;

    let members = state.partition.members(source);
    let moved: Vec<usize> = rand::seq::index::sample(rng, n_source, m)
        .into_iter()
        .map(|i| members[i])
        .collect();

    let delta_ll = moved_columns_loglik_delta(data, state, source, target, &moved);
    let az = hyper.alpha_z;
    let delta_prior = cluster_log_cohesion(n_source - m, az) + cluster_log_cohesion(n_target + m, az)
        - cluster_log_cohesion(n_source, az)
        - cluster_log_cohesion(n_target, az);
    let rev_weights = destination_weights(state, target, distance_epsilon);
    let selection = fwd_weights.iter().sum::<f64>().ln() - rev_weights.iter().sum::<f64>().ln();
    let log_ratio = delta_ll + delta_prior + log_proposal_ratio(n_source, n_target, m) + selection;

    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accepted {
        for &j in &moved {
            state.partition.reassign(j, target);
        }
        let before = state.loglik;
        state.loglik += delta_ll;
        if cfg!(debug_assertions) {
            let full = crate::model::log_likelihood(data, state)?;
            let tol = 1e-8 * full.abs().max(1.0);
            if (full - state.loglik).abs() > tol {
                return Err(Error::Internal(format!(
                    "incremental likelihood {} (from {before}) disagrees with full {full}",
                    state.loglik
                )));
            }
        }
    }
    Ok(MoveOutcome::Proposed {
        source,
        target,
        moved,
        log_ratio,
        accepted,
    })
}
