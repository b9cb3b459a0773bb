//! Starting configuration for the search and starting states for chains.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::fa::{fit_standard_fa_with, gaussian_fa_loglik, FaWorkspace, StandardFaFit};
use super::gmm::{cluster_loading_rows, CovarianceModel};
use super::kmeans::kmeans;
use crate::error::{Error, Result};
use crate::model::{
    clustered_param_count, ClusterLoadings, DataMatrix, FactorScores, Partition, SamplerState, Uniquenesses,
};

pub const DEFAULT_K_MAX: usize = 10;
pub const DEFAULT_G_MAX: usize = 30;
pub(crate) const FA_MAX_ITER: usize = 2000;
pub(crate) const FA_TOL: f64 = 1e-9;

pub fn default_g_max(p: usize) -> usize {
    p.min(DEFAULT_G_MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitCandidate {
    pub k: usize,
    pub g: usize,
    pub model: CovarianceModel,
    /// Log-likelihood of the standard fit.
    pub fa_loglik: f64,
    /// Log-likelihood after collapsing rows to cluster means.
    pub collapsed_loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitSelection {
    pub k: usize,
    pub g: usize,
    pub candidates: Vec<InitCandidate>,
}

/// Replaces each loading row by the mean of its cluster.
pub fn collapse_rows(loadings: &DMatrix<f64>, assignment: &[usize]) -> DMatrix<f64> {
    let g = assignment.iter().max().map_or(0, |v| v + 1);
    let k = loadings.ncols();
    let mut sums = DMatrix::<f64>::zeros(g, k);
    let mut counts = vec![0usize; g];
    for (j, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for f in 0..k {
            sums[(c, f)] += loadings[(j, f)];
        }
    }
    DMatrix::from_fn(loadings.nrows(), k, |j, f| {
        let c = assignment[j];
        sums[(c, f)] / counts[c] as f64
    })
}

/// Chooses `(K, G)` by fitting standard factor models for `k = 1..=k_max`,
/// clustering their loading rows, collapsing and scoring the collapsed model by BIC.
pub fn initialize_kg(data: &DataMatrix, k_max: usize, g_max: usize) -> Result<InitSelection> {
    let ws = FaWorkspace::new(data)?;
    initialize_kg_with(&ws, k_max, g_max)
}

pub fn initialize_kg_with(ws: &FaWorkspace, k_max: usize, g_max: usize) -> Result<InitSelection> {
    let p = ws.p();
    if k_max == 0 || g_max == 0 {
        return Err(Error::Usage("k_max and g_max must be at least 1".into()));
    }
    if p < 2 {
        return Err(Error::Usage("initialization needs at least two variables".into()));
    }
    let ln_n = (ws.n as f64).ln();
    let mut candidates = Vec::new();
    for k in 1..=k_max.min(p - 1) {
        let fa = fit_standard_fa_with(ws, k, FA_MAX_ITER, FA_TOL)?;
        let rows = cluster_loading_rows(&fa.loadings, g_max.min(p))?;
        let collapsed = collapse_rows(&fa.loadings, &rows.assignment);
        let ll = gaussian_fa_loglik(&ws.cov, ws.n, &collapsed, &fa.psi)?;
        let n_params = clustered_param_count(rows.g, k, p);
        candidates.push(InitCandidate {
            k,
            g: rows.g,
            model: rows.model,
            fa_loglik: fa.loglik,
            collapsed_loglik: ll,
            n_params,
            bic: 2.0 * ll - n_params as f64 * ln_n,
            assignment: rows.assignment,
        });
    }
    let best = candidates
        .iter()
        .fold(None::<&InitCandidate>, |acc, c| match acc {
            Some(b) if b.bic >= c.bic => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Internal("no initialization candidates".into()))?;
    Ok(InitSelection {
        k: best.k,
        g: best.g,
        candidates: candidates.clone(),
    })
}

/// Chain starting state at a fixed `(K, G)`: standard factor analysis, then k-means
/// of its loading rows into `G` groups. Scores start at their conditional means
/// under the standard fit.
pub fn initial_state(data: &DataMatrix, k: usize, g: usize, seed: u64) -> Result<SamplerState> {
    let ws = FaWorkspace::new(data)?;
    let fa = fit_standard_fa_with(&ws, k.min(data.p() - 1).max(1), FA_MAX_ITER, FA_TOL)?;
    initial_state_from_fit(data, &fa, k, g, seed)
}

pub fn initial_state_from_fit(
    data: &DataMatrix,
    fa: &StandardFaFit,
    k: usize,
    g: usize,
    seed: u64,
) -> Result<SamplerState> {
    let p = data.p();
    if k == 0 || g == 0 || g > p {
        return Err(Error::Usage(format!(
            "cannot start a chain at K = {k}, G = {g} with p = {p}"
        )));
    }
    // pad with zero columns if the standard fit has fewer factors than requested
    let fk = fa.loadings.ncols();
    let loadings = DMatrix::from_fn(p, k, |j, f| if f < fk { fa.loadings[(j, f)] } else { 0.0 });
    let km = kmeans(&loadings, g, 10, seed)?;
    let partition = Partition::new(km.assignment, g)?;
    let cluster = ClusterLoadings::new(km.centroids)?;
    let psi = Uniquenesses::new(fa.psi.clone())?;
    let beta = fa.score_projection()?;
    let mut scores = data.values() * beta.transpose();
    if fk < k {
        scores = DMatrix::from_fn(data.n(), k, |i, f| if f < fk { scores[(i, f)] } else { 0.0 });
    }
    SamplerState::new(data, cluster, psi, partition, FactorScores::new(scores)?)
}

/// `Ψ` starting values when no standard fit is available.
pub fn half_variance_psi(data: &DataMatrix) -> Result<Uniquenesses> {
    let s = data.sample_covariance();
    Uniquenesses::new(DVector::from_fn(data.p(), |j, _| (0.5 * s[(j, j)]).max(1e-8)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::unlabeled(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal)))
            .unwrap()
            .center()
    }

    #[test]
    fn collapse_zeroes_within_cluster_spread() {
        let l = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 0.0]);
        let c = collapse_rows(&l, &[0, 0, 1, 0]);
        assert_eq!(c.row(0), c.row(1));
        assert_eq!(c.row(0), c.row(3));
        assert_eq!(c[(0, 0)], 3.0);
        assert_eq!(c.row(2), l.row(2));
    }

    #[test]
    fn pure_noise_selects_small_model() {
        let data = noise(300, 8, 1);
        let sel = initialize_kg(&data, 4, 6).unwrap();
        assert_eq!(sel.k, 1);
        assert!(sel.g <= 2);
        assert_eq!(sel.candidates.len(), 4);
    }

    #[test]
    fn selection_is_in_range_and_deterministic() {
        let data = noise(100, 6, 2);
        let a = initialize_kg(&data, 3, 4).unwrap();
        assert!((1..=3).contains(&a.k) && (1..=4).contains(&a.g));
        assert_eq!(a, initialize_kg(&data, 3, 4).unwrap());
        for c in &a.candidates {
            assert!(c.n_params < 6 * c.k + 6 || c.g == 6);
        }
    }

    #[test]
    fn starting_state_is_consistent() {
        let data = noise(50, 6, 3);
        let st = initial_state(&data, 2, 3, 7).unwrap();
        assert_eq!(st.n_factors(), 2);
        assert_eq!(st.n_clusters(), 3);
        assert_eq!(st.partition.occupied_clusters(), 3);
        assert!(st.loglik.is_finite());
        assert!(initial_state(&data, 2, 7, 7).is_err());
    }
}
