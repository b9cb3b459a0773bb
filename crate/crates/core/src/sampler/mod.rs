//! Metropolis-within-Gibbs sampler for the clustered-loadings model.

pub mod allocation;
pub mod chain;
pub mod conditionals;
pub mod summary;

pub use allocation::{log_proposal_ratio, proposal_ratio_exact, propose_allocation_move, MoveOutcome};
pub use chain::{run_chain, ChainTrace, Draw, SamplerConfig};
pub use conditionals::{
    loadings_posterior, sample_cluster_loadings, sample_scores, sample_uniquenesses, scores_posterior,
    uniquenesses_posterior,
};
pub use summary::{binder_loss, coclustering_matrix, point_estimates, PointEstimates};
