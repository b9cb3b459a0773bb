//! Domain types for the clustered-loadings factor model and its deterministic math.
//!
//! Observations follow `x_i = Z Λ_c u_i + ε_i` where `Z` is a `p × G` allocation of
//! variables to clusters, `Λ_c` holds one representative loading row per cluster and
//! `ε_i ~ N(0, Ψ)` with diagonal `Ψ`. Variables in the same cluster share their
//! loading row, which is what flags them as redundant.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Centered `n × p` observation matrix with one label per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
    centered: bool,
}

impl DataMatrix {
    /// Wraps raw observations (rows = samples). Values are taken as-is; call
    /// [`DataMatrix::center`] before fitting.
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 || p < 1 {
            return Err(Error::InvalidInput(format!(
                "data matrix needs n >= 2 and p >= 1, got {n} x {p}"
            )));
        }
        if labels.len() != p {
            return Err(Error::InvalidInput(format!(
                "{} labels supplied for {p} columns",
                labels.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {}, column {}",
                idx % n,
                idx / n
            )));
        }
        Ok(Self {
            values,
            labels,
            centered: false,
        })
    }

    /// Same as [`DataMatrix::new`] with generated labels `v1..vp`.
    pub fn unlabeled(values: DMatrix<f64>) -> Result<Self> {
        let labels = (1..=values.ncols()).map(|j| format!("v{j}")).collect();
        Self::new(values, labels)
    }

    /// Subtracts column means.
    pub fn center(mut self) -> Self {
        let n = self.values.nrows() as f64;
        for mut col in self.values.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
        }
        self.centered = true;
        self
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Labels parsed as numbers (wavenumbers), if every label is numeric.
    pub fn numeric_labels(&self) -> Option<Vec<f64>> {
        self.labels.iter().map(|l| l.trim().parse().ok()).collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InvalidInput("column selection is empty".into()));
        }
        let values = self.values.select_columns(cols);
        let labels = cols.iter().map(|&c| self.labels[c].clone()).collect();
        Ok(Self {
            values,
            labels,
            centered: self.centered,
        })
    }

    /// Sample covariance with the `n - 1` divisor.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let x = if self.centered {
            self.values.clone()
        } else {
            self.clone().center().values
        };
        (x.transpose() * &x) / (self.n() as f64 - 1.0)
    }

    /// Sample correlation matrix.
    pub fn sample_correlation(&self) -> Result<DMatrix<f64>> {
        covariance_to_correlation(&self.sample_covariance())
    }
}

/// Allocation of `p` variables to `G` clusters. Labels are 0-based; empty clusters
/// are allowed since `G` acts as an upper bound during sampling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    n_clusters: usize,
    occupancy: Vec<usize>,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if n_clusters == 0 {
            return Err(Error::Config("a partition needs at least one cluster".into()));
        }
        if assignment.is_empty() {
            return Err(Error::Config("a partition needs at least one variable".into()));
        }
        let mut occupancy = vec![0; n_clusters];
        for (j, &g) in assignment.iter().enumerate() {
            if g >= n_clusters {
                return Err(Error::Config(format!(
                    "variable {j} assigned to cluster {g} but G = {n_clusters}"
                )));
            }
            occupancy[g] += 1;
        }
        Ok(Self {
            assignment,
            n_clusters,
            occupancy,
        })
    }

    /// Every variable in cluster 0.
    pub fn single(p: usize) -> Self {
        Self {
            assignment: vec![0; p],
            n_clusters: 1,
            occupancy: vec![p],
        }
    }

    /// Relabels arbitrary labels to `0..G` in order of first appearance.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(labels: &[T]) -> Result<Self> {
        let mut seen = std::collections::HashMap::new();
        let assignment: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(l.clone()).or_insert(next)
            })
            .collect();
        let g = seen.len().max(1);
        Self::new(assignment, g)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn occupancy(&self) -> &[usize] {
        &self.occupancy
    }

    pub fn p(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, var: usize) -> usize {
        self.assignment[var]
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| (c == g).then_some(j))
            .collect()
    }

    pub fn occupied_clusters(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c > 0).count()
    }

    /// Moves variable `var` into cluster `g`.
    pub fn reassign(&mut self, var: usize, g: usize) {
        let old = self.assignment[var];
        self.occupancy[old] -= 1;
        self.occupancy[g] += 1;
        self.assignment[var] = g;
    }

    /// Applies a label permutation: old label `g` becomes `perm[g]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_clusters {
            return Err(Error::Config("label permutation has the wrong length".into()));
        }
        Self::new(self.assignment.iter().map(|&g| perm[g]).collect(), self.n_clusters)
    }

    /// Relabels clusters by order of first appearance and drops empty ones.
    pub fn canonical(&self) -> Self {
        Self::from_labels(&self.assignment).expect("non-empty partition")
    }

    /// Dense `p × G` binary allocation matrix.
    pub fn allocation_matrix(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.p(), self.n_clusters);
        for (j, &g) in self.assignment.iter().enumerate() {
            z[(j, g)] = 1.0;
        }
        z
    }
}

/// `G × K` matrix of cluster-representative loading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLoadings(DMatrix<f64>);

impl ClusterLoadings {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Config("cluster loadings need G >= 1 and K >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite cluster loading".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(g: usize, k: usize) -> Self {
        Self(DMatrix::zeros(g, k))
    }

    pub fn n_clusters(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Applies a row permutation consistent with [`Partition::relabel`]: row `g`
    /// moves to `perm[g]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut out = self.0.clone();
        for (g, &target) in perm.iter().enumerate() {
            out.set_row(target, &self.0.row(g));
        }
        Self(out)
    }
}

/// Diagonal of `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Uniquenesses(DVector<f64>);

impl Uniquenesses {
    pub fn new(psi: DVector<f64>) -> Result<Self> {
        if let Some(j) = psi.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidState(format!(
                "uniqueness {j} must be positive and finite, got {}",
                psi[j]
            )));
        }
        Ok(Self(psi))
    }

    pub fn constant(p: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(p, value))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// `n × K` factor scores, row `i` is `u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScores(DMatrix<f64>);

impl FactorScores {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite factor score".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self(DMatrix::zeros(n, k))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub sigma_lambda: f64,
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub alpha_z: f64,
}

impl Hyperparameters {
    pub const DEFAULT_ALPHA: f64 = 2.5;
    pub const DEFAULT_SIGMA_LAMBDA: f64 = 5.0;
    pub const DEFAULT_ALPHA_Z: f64 = 1.0;

    pub fn new(sigma_lambda: f64, alpha: f64, beta: DVector<f64>, alpha_z: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(sigma_lambda) || !ok(alpha) || !ok(alpha_z) || !beta.iter().all(|&b| ok(b)) {
            return Err(Error::Config("hyperparameters must be strictly positive".into()));
        }
        Ok(Self {
            sigma_lambda,
            alpha,
            beta,
            alpha_z,
        })
    }

    /// Data-driven defaults: `β_j = (α - 1) / (S⁻¹)_jj` with `S` the sample
    /// covariance. When `S` is singular (n < p) a small ridge is added until the
    /// Cholesky factorization succeeds.
    pub fn from_data(data: &DataMatrix, sigma_lambda: f64, alpha: f64, alpha_z: f64) -> Result<Self> {
        let s = data.sample_covariance();
        let inv_diag = inverse_diagonal_with_ridge(&s)?;
        let beta = inv_diag.map(|d| (alpha - 1.0) / d);
        Self::new(sigma_lambda, alpha, beta, alpha_z)
    }

    pub fn default_for(data: &DataMatrix) -> Result<Self> {
        Self::from_data(
            data,
            Self::DEFAULT_SIGMA_LAMBDA,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_ALPHA_Z,
        )
    }
}

fn inverse_diagonal_with_ridge(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = s.nrows();
    let scale = (s.trace() / p as f64).max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = s.clone();
        for j in 0..p {
            m[(j, j)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let inv = chol.inverse();
            return Ok(inv.diagonal());
        }
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
    }
    Err(Error::Numeric(
        "sample covariance could not be inverted even with a ridge".into(),
    ))
}

/// One MCMC state with its cached log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub loadings: ClusterLoadings,
    pub psi: Uniquenesses,
    pub partition: Partition,
    pub scores: FactorScores,
    pub loglik: f64,
}

impl SamplerState {
    /// Builds a state and fills in the cached log-likelihood.
    pub fn new(
        data: &DataMatrix,
        loadings: ClusterLoadings,
        psi: Uniquenesses,
        partition: Partition,
        scores: FactorScores,
    ) -> Result<Self> {
        check_dimensions(data, &partition, &loadings, &psi, &scores)?;
        let loglik = log_likelihood_parts(data, &partition, &loadings, &psi, &scores)?;
        Ok(Self {
            loadings,
            psi,
            partition,
            scores,
            loglik,
        })
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.n_factors()
    }

    pub fn n_clusters(&self) -> usize {
        self.partition.n_clusters()
    }

    /// Recomputes the cached log-likelihood.
    pub fn refresh_loglik(&mut self, data: &DataMatrix) -> Result<()> {
        self.loglik = log_likelihood_parts(data, &self.partition, &self.loadings, &self.psi, &self.scores)?;
        Ok(())
    }
}

pub(crate) fn check_dimensions(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    psi: &Uniquenesses,
    scores: &FactorScores,
) -> Result<()> {
    let (n, p) = (data.n(), data.p());
    if partition.p() != p || psi.len() != p {
        return Err(Error::Config(format!(
            "variable count mismatch: data p = {p}, partition p = {}, psi length = {}",
            partition.p(),
            psi.len()
        )));
    }
    if partition.n_clusters() != loadings.n_clusters() {
        return Err(Error::Config(format!(
            "partition has G = {} but loadings have {} rows",
            partition.n_clusters(),
            loadings.n_clusters()
        )));
    }
    if scores.matrix().nrows() != n || scores.matrix().ncols() != loadings.n_factors() {
        return Err(Error::Config(format!(
            "scores are {}x{}, expected {n}x{}",
            scores.matrix().nrows(),
            scores.matrix().ncols(),
            loadings.n_factors()
        )));
    }
    Ok(())
}

/// Number of covariance parameters of the clustered model, `G·K + p`.
pub fn clustered_param_count(g: usize, k: usize, p: usize) -> usize {
    g * k + p
}

/// Number of covariance parameters of standard factor analysis, `p·K + p`.
pub fn standard_param_count(p: usize, k: usize) -> usize {
    p * k + p
}

/// `Λ̃ = Z Λ_c`: row `j` is the loading row of variable `j`'s cluster.
pub fn expand_loadings(partition: &Partition, loadings: &ClusterLoadings) -> Result<DMatrix<f64>> {
    if partition.n_clusters() != loadings.n_clusters() {
        return Err(Error::Config(format!(
            "partition has G = {} but loadings have {} rows",
            partition.n_clusters(),
            loadings.n_clusters()
        )));
    }
    let lc = loadings.matrix();
    let mut out = DMatrix::zeros(partition.p(), lc.ncols());
    for (j, &g) in partition.assignment().iter().enumerate() {
        out.set_row(j, &lc.row(g));
    }
    Ok(out)
}

/// `Σ̃ = Λ̃ Λ̃ᵀ + Ψ`.
pub fn model_covariance(partition: &Partition, loadings: &ClusterLoadings, psi: &Uniquenesses) -> Result<DMatrix<f64>> {
    if psi.len() != partition.p() {
        return Err(Error::Config(format!(
            "psi has length {} but partition covers {} variables",
            psi.len(),
            partition.p()
        )));
    }
    // Cluster-level Gram matrix, then scatter: avoids a p x K x p product.
    let lc = loadings.matrix();
    let gram = lc * lc.transpose();
    let a = partition.assignment();
    let p = partition.p();
    let mut sigma = DMatrix::from_fn(p, p, |r, c| gram[(a[r], a[c])]);
    for j in 0..p {
        sigma[(j, j)] += psi.vector()[j];
    }
    Ok(sigma)
}

/// `R = D^{-1/2} Σ D^{-1/2}`. Entries are clamped into `[-1, 1]` to absorb rounding.
pub fn covariance_to_correlation(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::InvalidInput("covariance matrix must be square".into()));
    }
    let d = sigma.diagonal();
    if let Some(j) = d.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "covariance diagonal entry {j} is not strictly positive ({})",
            d[j]
        )));
    }
    let inv_sd = d.map(|v| 1.0 / v.sqrt());
    let p = sigma.nrows();
    let mut r = DMatrix::from_fn(p, p, |i, j| (sigma[(i, j)] * (inv_sd[i] * inv_sd[j])).clamp(-1.0, 1.0));
    r.fill_diagonal(1.0);
    Ok(r)
}

/// `F = U Λ_cᵀ`, the `n × G` matrix of per-cluster fitted columns.
pub(crate) fn cluster_fits(scores: &FactorScores, loadings: &ClusterLoadings) -> DMatrix<f64> {
    scores.matrix() * loadings.matrix().transpose()
}

/// Diagonal of `M = (X - U Λ_cᵀ Zᵀ)ᵀ (X - U Λ_cᵀ Zᵀ)`, one residual sum of squares per
/// variable. The full `p × p` product is never formed.
pub fn residual_sums_of_squares(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    scores: &FactorScores,
) -> DVector<f64> {
    let fits = cluster_fits(scores, loadings);
    let x = data.values();
    DVector::from_iterator(
        data.p(),
        partition.assignment().iter().enumerate().map(|(j, &g)| {
            x.column(j)
                .iter()
                .zip(fits.column(g).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }),
    )
}

pub(crate) fn log_likelihood_parts(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    psi: &Uniquenesses,
    scores: &FactorScores,
) -> Result<f64> {
    let ss = residual_sums_of_squares(data, partition, loadings, scores);
    let n = data.n() as f64;
    let mut total = 0.0;
    for (j, (&s, &v)) in ss.iter().zip(psi.vector().iter()).enumerate() {
        let term = -0.5 * (n * (LN_2PI + v.ln()) + s / v);
        if !term.is_finite() {
            return Err(Error::Numeric(format!(
                "log-likelihood contribution of variable {j} is not finite"
            )));
        }
        total += term;
    }
    Ok(total)
}

/// Gaussian log-likelihood of the data given all latent quantities.
pub fn log_likelihood(data: &DataMatrix, state: &SamplerState) -> Result<f64> {
    check_dimensions(data, &state.partition, &state.loadings, &state.psi, &state.scores)?;
    log_likelihood_parts(data, &state.partition, &state.loadings, &state.psi, &state.scores)
}

/// Unnormalized log cohesion of the Dirichlet-process product partition prior, over
/// occupied clusters only: `G_occ log α_z + Σ log (n_g - 1)!`.
pub fn log_cohesion(occupancy: &[usize], alpha_z: f64) -> f64 {
    occupancy.iter().map(|&c| cluster_log_cohesion(c, alpha_z)).sum()
}

#[inline]
pub(crate) fn cluster_log_cohesion(size: usize, alpha_z: f64) -> f64 {
    if size == 0 {
        0.0
    } else {
        alpha_z.ln() + ln_gamma(size as f64)
    }
}

/// The four prior blocks, kept apart for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPriorTerms {
    pub loadings: f64,
    pub scores: f64,
    pub uniquenesses: f64,
    pub partition: f64,
}

impl LogPriorTerms {
    pub fn total(&self) -> f64 {
        self.loadings + self.scores + self.uniquenesses + self.partition
    }
}

pub fn log_prior_terms(state: &SamplerState, hyper: &Hyperparameters) -> Result<LogPriorTerms> {
    let psi = state.psi.vector();
    if let Some(j) = psi.iter().position(|&v| v <= 0.0) {
        return Err(Error::InvalidState(format!("uniqueness {j} is not positive")));
    }
    if hyper.beta.len() != psi.len() {
        return Err(Error::Config(format!(
            "beta has length {} but there are {} variables",
            hyper.beta.len(),
            psi.len()
        )));
    }
    let var_l = hyper.sigma_lambda * hyper.sigma_lambda;
    let lc = state.loadings.matrix();
    let loadings = -0.5 * (lc.len() as f64 * (LN_2PI + var_l.ln()) + lc.norm_squared() / var_l);
    let u = state.scores.matrix();
    let scores = -0.5 * (u.len() as f64 * LN_2PI + u.norm_squared());
    let a = hyper.alpha;
    let lg_a = ln_gamma(a);
    let uniquenesses = psi
        .iter()
        .zip(hyper.beta.iter())
        .map(|(&v, &b)| a * b.ln() - lg_a - (a + 1.0) * v.ln() - b / v)
        .sum();
    let partition = log_cohesion(state.partition.occupancy(), hyper.alpha_z);
    Ok(LogPriorTerms {
        loadings,
        scores,
        uniquenesses,
        partition,
    })
}

/// Sum of the log prior densities of `Λ_c`, `U`, `Ψ` and the partition.
pub fn log_prior(state: &SamplerState, hyper: &Hyperparameters) -> Result<f64> {
    Ok(log_prior_terms(state, hyper)?.total())
}

/// Unnormalized log posterior.
pub fn log_posterior_unnorm(data: &DataMatrix, state: &SamplerState, hyper: &Hyperparameters) -> Result<f64> {
    Ok(log_likelihood(data, state)? + log_prior(state, hyper)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize, g: usize, k: usize) -> (DataMatrix, SamplerState) {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let data = DataMatrix::unlabeled(x).unwrap().center();
        let assignment = (0..p).map(|j| if j < g { j } else { rng.random_range(0..g) }).collect();
        let partition = Partition::new(assignment, g).unwrap();
        let loadings = ClusterLoadings::new(DMatrix::from_fn(g, k, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let psi = Uniquenesses::new(DVector::from_fn(p, |_, _| rng.random_range(0.2..2.0))).unwrap();
        let scores = FactorScores::new(DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.5..1.5))).unwrap();
        let state = SamplerState::new(&data, loadings, psi, partition, scores).unwrap();
        (data, state)
    }

    #[test]
    fn expand_single_cluster_repeats_row() {
        let part = Partition::single(5);
        let lc = ClusterLoadings::new(dmatrix![0.3, -1.2]).unwrap();
        let l = expand_loadings(&part, &lc).unwrap();
        for j in 0..5 {
            assert_eq!(l.row(j), lc.matrix().row(0));
        }
    }

    #[test]
    fn expand_follows_assignment() {
        let part = Partition::new(vec![0, 0, 1], 2).unwrap();
        let lc = ClusterLoadings::new(dmatrix![2.0; 7.0]).unwrap();
        let l = expand_loadings(&part, &lc).unwrap();
        assert_eq!(l, dmatrix![2.0; 2.0; 7.0]);
    }

    #[test]
    fn expand_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let part = Partition::new((0..6).map(|_| rng.random_range(0..3)).collect(), 3).unwrap();
            let lc = ClusterLoadings::new(DMatrix::from_fn(3, 2, |_, _| rng.random_range(-3.0..3.0))).unwrap();
            let z = part.allocation_matrix();
            // naive triple loop
            let mut naive = DMatrix::zeros(6, 2);
            for j in 0..6 {
                for k in 0..2 {
                    for g in 0..3 {
                        naive[(j, k)] += z[(j, g)] * lc.matrix()[(g, k)];
                    }
                }
            }
            assert_eq!(expand_loadings(&part, &lc).unwrap(), naive);
        }
    }

    #[test]
    fn expand_rejects_mismatched_rows() {
        let part = Partition::new(vec![0, 1], 2).unwrap();
        let lc = ClusterLoadings::zeros(3, 1);
        assert!(matches!(expand_loadings(&part, &lc), Err(Error::Config(_))));
    }

    #[test]
    fn covariance_zero_loadings_is_identity() {
        let part = Partition::single(4);
        let sigma = model_covariance(
            &part,
            &ClusterLoadings::zeros(1, 1),
            &Uniquenesses::constant(4, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(sigma, DMatrix::identity(4, 4));
    }

    #[test]
    fn covariance_hand_case() {
        let part = Partition::new(vec![0, 0, 1], 2).unwrap();
        let lc = ClusterLoadings::new(dmatrix![1.0; 0.0]).unwrap();
        let sigma = model_covariance(&part, &lc, &Uniquenesses::constant(3, 1.0).unwrap()).unwrap();
        assert_eq!(sigma, dmatrix![2.0, 1.0, 0.0; 1.0, 2.0, 0.0; 0.0, 0.0, 1.0]);
    }

    #[test]
    fn covariance_matches_naive_and_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (_, s) = random_instance(&mut rng, 3, 7, 3, 2);
            let sigma = model_covariance(&s.partition, &s.loadings, &s.psi).unwrap();
            let lt = s.partition.allocation_matrix() * s.loadings.matrix();
            let naive = &lt * lt.transpose() + DMatrix::from_diagonal(s.psi.vector());
            assert!((&sigma - &naive).amax() < 1e-12);
            assert_eq!(sigma, sigma.transpose());
            assert!(sigma.clone().cholesky().is_some());
            for j in 0..7 {
                assert!(sigma[(j, j)] >= s.psi.vector()[j]);
            }
        }
    }

    #[test]
    fn correlation_cases() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(covariance_to_correlation(&eye).unwrap(), eye);
        let r = covariance_to_correlation(&dmatrix![4.0, 2.0; 2.0, 1.0]).unwrap();
        assert_eq!(r, dmatrix![1.0, 1.0; 1.0, 1.0]);
        assert!(matches!(
            covariance_to_correlation(&dmatrix![1.0, 0.0; 0.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn correlation_elementwise_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, s) = random_instance(&mut rng, 3, 6, 2, 2);
        let sigma = model_covariance(&s.partition, &s.loadings, &s.psi).unwrap();
        let r = covariance_to_correlation(&sigma).unwrap();
        for i in 0..6 {
            assert_eq!(r[(i, i)], 1.0);
            for j in 0..6 {
                let oracle = sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt();
                assert!((r[(i, j)] - oracle).abs() < 1e-14);
                assert!(r[(i, j)].abs() <= 1.0);
            }
        }
        let rr = covariance_to_correlation(&r).unwrap();
        assert!((&rr - &r).amax() < 1e-12);
    }

    #[test]
    fn loglik_scalar_zero_case() {
        let data = DataMatrix::unlabeled(dmatrix![0.0; 0.0]).unwrap();
        // n must be >= 2; check one observation's worth by halving
        let state = SamplerState::new(
            &data,
            ClusterLoadings::zeros(1, 1),
            Uniquenesses::constant(1, 1.0).unwrap(),
            Partition::single(1),
            FactorScores::zeros(2, 1),
        )
        .unwrap();
        let ll = log_likelihood(&data, &state).unwrap();
        assert!((ll / 2.0 - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-15);
    }

    #[test]
    fn loglik_matches_dense_gaussian_oracle() {
        let data = DataMatrix::unlabeled(dmatrix![0.5, -1.0; -0.5, 1.0]).unwrap();
        let state = SamplerState::new(
            &data,
            ClusterLoadings::new(dmatrix![0.7; -0.4]).unwrap(),
            Uniquenesses::new(DVector::from_vec(vec![0.6, 1.3])).unwrap(),
            Partition::new(vec![0, 1], 2).unwrap(),
            FactorScores::new(dmatrix![0.9; -1.1]).unwrap(),
        )
        .unwrap();
        // dense oracle: log N(x_i; Λ̃u_i, Ψ) with generic determinant and inverse
        let lt = state.partition.allocation_matrix() * state.loadings.matrix();
        let cov = DMatrix::from_diagonal(state.psi.vector());
        let inv = cov.clone().try_inverse().unwrap();
        let mut oracle = 0.0;
        for i in 0..2 {
            let x = data.values().row(i).transpose();
            let mu = &lt * state.scores.matrix().row(i).transpose();
            let r = x - mu;
            let quad = (r.transpose() * &inv * &r)[(0, 0)];
            oracle += -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad);
        }
        assert!((log_likelihood(&data, &state).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn loglik_zero_residuals() {
        let lc = dmatrix![1.0, 0.5; -0.3, 2.0];
        let part = Partition::new(vec![0, 1, 1], 2).unwrap();
        let u = dmatrix![1.0, 2.0; -0.5, 0.25; 0.0, 1.0];
        let lt = expand_loadings(&part, &ClusterLoadings::new(lc.clone()).unwrap()).unwrap();
        let x = &u * lt.transpose();
        let data = DataMatrix::unlabeled(x).unwrap();
        let psi = DVector::from_vec(vec![0.5, 1.5, 2.5]);
        let state = SamplerState::new(
            &data,
            ClusterLoadings::new(lc).unwrap(),
            Uniquenesses::new(psi.clone()).unwrap(),
            part,
            FactorScores::new(u).unwrap(),
        )
        .unwrap();
        let expected = -(3.0 / 2.0) * (3.0 * LN_2PI + psi.iter().map(|v| v.ln()).sum::<f64>());
        assert!((state.loglik - expected).abs() < 1e-12);
    }

    #[test]
    fn ppm_cohesion_cases() {
        assert!((log_cohesion(&[4], 1.0) - 6f64.ln()).abs() < 1e-12);
        assert!(log_cohesion(&[1, 1, 1, 1], 1.0).abs() < 1e-12);
        // empty clusters contribute nothing
        assert_eq!(log_cohesion(&[3, 0, 1], 2.0), log_cohesion(&[3, 1], 2.0));
    }

    #[test]
    fn log_prior_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, state) = random_instance(&mut rng, 4, 5, 2, 2);
        let hyper = Hyperparameters::new(1.7, 2.5, DVector::from_fn(5, |j, _| 0.3 + j as f64 * 0.1), 0.8).unwrap();
        let norm_lpdf = |x: f64, sd: f64| -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * (x / sd).powi(2);
        let ig_lpdf = |x: f64, a: f64, b: f64| a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x;
        let mut oracle = 0.0;
        for v in state.loadings.matrix().iter() {
            oracle += norm_lpdf(*v, 1.7);
        }
        for v in state.scores.matrix().iter() {
            oracle += norm_lpdf(*v, 1.0);
        }
        for j in 0..5 {
            oracle += ig_lpdf(state.psi.vector()[j], 2.5, hyper.beta[j]);
        }
        for &c in state.partition.occupancy() {
            if c > 0 {
                oracle += 0.8f64.ln() + (1..c).map(|m| (m as f64).ln()).sum::<f64>();
            }
        }
        assert!((log_prior(&state, &hyper).unwrap() - oracle).abs() < 1e-10);
        let post = log_posterior_unnorm(&data, &state, &hyper).unwrap();
        assert!((post - state.loglik - oracle).abs() < 1e-9);
    }

    #[test]
    fn posterior_recomposes_and_is_label_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..5 {
            let (data, state) = random_instance(&mut rng, 6, 8, 3, 2);
            let hyper = Hyperparameters::new(2.0, 2.5, DVector::from_element(8, 0.7), 1.0).unwrap();
            let lp = log_posterior_unnorm(&data, &state, &hyper).unwrap();
            let parts = log_likelihood(&data, &state).unwrap() + log_prior(&state, &hyper).unwrap();
            assert_eq!(lp, parts);
            let perm = [2, 0, 1];
            let relabeled = SamplerState::new(
                &data,
                state.loadings.relabel(&perm),
                state.psi.clone(),
                state.partition.relabel(&perm).unwrap(),
                state.scores.clone(),
            )
            .unwrap();
            let lp2 = log_posterior_unnorm(&data, &relabeled, &hyper).unwrap();
            assert!((lp - lp2).abs() < 1e-9 * lp.abs().max(1.0));
        }
    }

    #[test]
    fn posterior_finite_over_psi_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (data, state) = random_instance(&mut rng, 5, 4, 2, 1);
        let hyper = Hyperparameters::new(5.0, 2.5, DVector::from_element(4, 1.0), 1.0).unwrap();
        for e in -6..=6 {
            let mut s = state.clone();
            s.psi = Uniquenesses::constant(4, 10f64.powi(e)).unwrap();
            s.refresh_loglik(&data).unwrap();
            assert!(log_posterior_unnorm(&data, &s, &hyper).unwrap().is_finite());
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(clustered_param_count(5, 3, 40), 55);
        assert_eq!(standard_param_count(40, 3), 160);
        assert!(clustered_param_count(5, 3, 40) < standard_param_count(40, 3));
    }

    #[test]
    fn centering_zeroes_column_means() {
        let data = DataMatrix::unlabeled(dmatrix![1.0, 100.0; 3.0, 300.0; 8.0, 50.0])
            .unwrap()
            .center();
        for col in data.values().column_iter() {
            assert!(col.sum().abs() < 1e-10 * col.amax().max(1.0));
        }
        assert!(data.is_centered());
    }

    #[test]
    fn data_rejects_non_finite() {
        assert!(DataMatrix::unlabeled(dmatrix![1.0; f64::NAN]).is_err());
        assert!(DataMatrix::unlabeled(dmatrix![1.0]).is_err());
    }
}
