//! Standard factor analysis, `(K, G)` initialization, information criteria and
//! greedy model search.

pub mod criteria;
pub mod fa;
pub mod gmm;
pub mod init;
pub mod kmeans;
pub mod search;

pub use criteria::{compute_criteria, criteria_from_logliks, ModelScore, MomentScale};
pub use fa::{fit_standard_fa, gaussian_fa_loglik, FaWorkspace, StandardFaFit};
pub use gmm::{cluster_loading_rows, CovarianceModel, RowClustering};
pub use init::{initial_state, initialize_kg, InitCandidate, InitSelection};
pub use search::{greedy_search_with, neighbors, SearchOptions, SearchOutcome, SearchRecord};
