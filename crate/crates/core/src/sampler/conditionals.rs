//! Conjugate full-conditional draws for the factor scores, the cluster loadings and
//! the uniquenesses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{residual_sums_of_squares, ClusterLoadings, DataMatrix, FactorScores, Partition, Uniquenesses};

/// Per-cluster precision weights `w_g = Σ_{j ∈ C_g} 1/ψ_j`, i.e. the diagonal of
/// `Zᵀ Ψ⁻¹ Z`.
pub(crate) fn cluster_precision_weights(partition: &Partition, psi: &Uniquenesses) -> DVector<f64> {
    let mut w = DVector::zeros(partition.n_clusters());
    for (j, &g) in partition.assignment().iter().enumerate() {
        w[g] += 1.0 / psi.vector()[j];
    }
    w
}

/// `X Ψ⁻¹ Z`, the `n × G` matrix of precision-weighted cluster sums.
pub(crate) fn weighted_cluster_sums(data: &DataMatrix, partition: &Partition, psi: &Uniquenesses) -> DMatrix<f64> {
    let x = data.values();
    let mut y = DMatrix::zeros(data.n(), partition.n_clusters());
    for (j, &g) in partition.assignment().iter().enumerate() {
        let inv = 1.0 / psi.vector()[j];
        let mut col = y.column_mut(g);
        col.axpy(inv, &x.column(j), 1.0);
    }
    y
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Posterior of the scores: row means `μ_u` (as an `n × K` matrix) and the shared
/// covariance `Σ_u = (I + Λ̃ᵀΨ⁻¹Λ̃)⁻¹`.
pub fn scores_posterior(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    psi: &Uniquenesses,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = loadings.n_factors();
    let lc = loadings.matrix();
    let w = cluster_precision_weights(partition, psi);
    // I + Λ_cᵀ diag(w) Λ_c equals I + Λ̃ᵀ Ψ⁻¹ Λ̃ since Λ̃ repeats cluster rows.
    let weighted = DMatrix::from_fn(lc.nrows(), k, |g, c| w[g] * lc[(g, c)]);
    let mut precision = lc.transpose() * weighted;
    for c in 0..k {
        precision[(c, c)] += 1.0;
    }
    symmetrize(&mut precision);
    let mut cov = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("score precision is not positive definite".into()))?
        .inverse();
    symmetrize(&mut cov);
    let b = weighted_cluster_sums(data, partition, psi) * lc;
    let means = b * &cov;
    Ok((means, cov))
}

/// Draws every `u_i` from `N_K(μ_u, Σ_u)`.
pub fn sample_scores<R: Rng + ?Sized>(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    psi: &Uniquenesses,
    rng: &mut R,
) -> Result<FactorScores> {
    let (mut means, cov) = scores_posterior(data, partition, loadings, psi)?;
    let k = cov.nrows();
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("score covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut z = DVector::zeros(k);
    for i in 0..means.nrows() {
        for c in 0..k {
            z[c] = rng.sample(StandardNormal);
        }
        let shift = &l * &z;
        for c in 0..k {
            means[(i, c)] += shift[c];
        }
    }
    FactorScores::new(means)
}

/// Posterior precision and mean of `vec(Λ_c)` (column-major, length `G·K`):
/// precision `UᵀU ⊗ ZᵀΨ⁻¹Z + σ_λ⁻² I`, mean `precision⁻¹ vec(ZᵀΨ⁻¹XᵀU)`.
pub fn loadings_posterior(
    data: &DataMatrix,
    partition: &Partition,
    scores: &FactorScores,
    psi: &Uniquenesses,
    sigma_lambda: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let u = scores.matrix();
    let utu = u.transpose() * u;
    let ztpz = DMatrix::from_diagonal(&cluster_precision_weights(partition, psi));
    let mut precision = utu.kronecker(&ztpz);
    let prior_prec = 1.0 / (sigma_lambda * sigma_lambda);
    for d in 0..precision.nrows() {
        precision[(d, d)] += prior_prec;
    }
    symmetrize(&mut precision);
    // Zᵀ Ψ⁻¹ Xᵀ U = (X Ψ⁻¹ Z)ᵀ U
    let h = weighted_cluster_sums(data, partition, psi).transpose() * u;
    let rhs = DVector::from_column_slice(h.as_slice());
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("loading precision is not positive definite".into()))?;
    let mean = chol.solve(&rhs);
    Ok((mean, precision))
}

/// One draw of `Λ_c` from its Gaussian full conditional.
pub fn sample_cluster_loadings<R: Rng + ?Sized>(
    data: &DataMatrix,
    partition: &Partition,
    scores: &FactorScores,
    psi: &Uniquenesses,
    sigma_lambda: f64,
    rng: &mut R,
) -> Result<ClusterLoadings> {
    let (mean, precision) = loadings_posterior(data, partition, scores, psi, sigma_lambda)?;
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("loading precision is not positive definite".into()))?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // precision = L Lᵀ, so L⁻ᵀ z has covariance precision⁻¹
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numeric("triangular solve failed for loadings".into()))?;
    let draw = mean + noise;
    let g = partition.n_clusters();
    let k = scores.matrix().ncols();
    ClusterLoadings::new(DMatrix::from_column_slice(g, k, draw.as_slice()))
}

/// Inverse-gamma shape and rates of the uniquenesses' full conditionals.
pub fn uniquenesses_posterior(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    scores: &FactorScores,
    alpha: f64,
    beta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let ss = residual_sums_of_squares(data, partition, loadings, scores);
    let shape = alpha + data.n() as f64 / 2.0;
    (shape, beta + ss * 0.5)
}

/// Draws each `ψ_j ~ IG(α + n/2, β_j + M_jj/2)`.
pub fn sample_uniquenesses<R: Rng + ?Sized>(
    data: &DataMatrix,
    partition: &Partition,
    loadings: &ClusterLoadings,
    scores: &FactorScores,
    alpha: f64,
    beta: &DVector<f64>,
    rng: &mut R,
) -> Result<Uniquenesses> {
    let (shape, rates) = uniquenesses_posterior(data, partition, loadings, scores, alpha, beta);
    let gamma =
        Gamma::new(shape, 1.0).map_err(|e| Error::Numeric(format!("invalid inverse-gamma shape {shape}: {e}")))?;
    let psi = rates.map(|rate| rate / gamma.sample(rng));
    if let Some(j) = psi.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Numeric(format!("uniqueness draw {j} is not positive")));
    }
    Uniquenesses::new(psi)
}
