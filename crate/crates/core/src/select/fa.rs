//! Maximum-likelihood factor analysis by EM on the sample covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{standard_param_count, DataMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardFaFit {
    /// `p × K` loadings (rotation is arbitrary).
    pub loadings: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
}

impl StandardFaFit {
    /// `β = (I + ΛᵀΨ⁻¹Λ)⁻¹ΛᵀΨ⁻¹`, so `E[u | x] = β x`.
    pub fn score_projection(&self) -> Result<DMatrix<f64>> {
        let (a_inv, w) = woodbury_core(&self.loadings, &self.psi)?;
        Ok(a_inv * w.transpose())
    }
}

/// Sample moments shared by every factor count fitted on the same data.
#[derive(Debug, Clone)]
pub struct FaWorkspace {
    /// Maximum-likelihood covariance `XᵀX / n`.
    pub cov: DMatrix<f64>,
    pub n: usize,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    order: Vec<usize>,
}

impl FaWorkspace {
    pub fn new(data: &DataMatrix) -> Result<Self> {
        if !data.is_centered() {
            return Err(Error::InvalidInput("factor analysis expects centered data".into()));
        }
        let x = data.values();
        let cov = (x.transpose() * x) / data.n() as f64;
        let eigen = SymmetricEigen::new(cov.clone());
        let mut order: Vec<usize> = (0..eigen.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
        Ok(Self {
            cov,
            n: data.n(),
            eigen,
            order,
        })
    }

    pub fn p(&self) -> usize {
        self.cov.nrows()
    }

    /// Probabilistic-PCA starting point for `k` factors.
    fn pca_start(&self, k: usize) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.p();
        let ev = &self.eigen.eigenvalues;
        let rest: Vec<f64> = self.order[k..].iter().map(|&i| ev[i].max(0.0)).collect();
        let sigma2 = if rest.is_empty() {
            0.0
        } else {
            rest.iter().sum::<f64>() / rest.len() as f64
        };
        let mut loadings = DMatrix::zeros(p, k);
        for (c, &i) in self.order[..k].iter().enumerate() {
            let scale = (ev[i] - sigma2).max(0.0).sqrt();
            loadings.set_column(c, &(self.eigen.eigenvectors.column(i) * scale));
        }
        let psi = DVector::from_fn(p, |j, _| {
            let s = self.cov[(j, j)];
            (s - loadings.row(j).norm_squared()).max(0.1 * s).max(psi_floor(s))
        });
        (loadings, psi)
    }
}

fn psi_floor(s_jj: f64) -> f64 {
    (1e-6 * s_jj).max(1e-12)
}

/// `(I + ΛᵀΨ⁻¹Λ)⁻¹` and `Ψ⁻¹Λ`.
fn woodbury_core(loadings: &DMatrix<f64>, psi: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = loadings.ncols();
    let w = DMatrix::from_fn(loadings.nrows(), k, |j, c| loadings[(j, c)] / psi[j]);
    let mut a = loadings.transpose() * &w;
    for c in 0..k {
        a[(c, c)] += 1.0;
    }
    let a_inv = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("I + ΛᵀΨ⁻¹Λ is not positive definite".into()))?
        .inverse();
    Ok((a_inv, w))
}

/// Gaussian log-likelihood of centered data under `N(0, ΛΛᵀ + Ψ)` given the ML
/// covariance `cov = XᵀX/n`. Uses the determinant lemma and Woodbury identity, so
/// no `p × p` inverse is formed.
pub fn gaussian_fa_loglik(cov: &DMatrix<f64>, n: usize, loadings: &DMatrix<f64>, psi: &DVector<f64>) -> Result<f64> {
    let p = cov.nrows();
    let (a_inv, w) = woodbury_core(loadings, psi)?;
    // log|Σ| = log|Ψ| + log|A|, and log|A| = -log|A⁻¹|
    let log_det_a = -a_inv
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("(I + ΛᵀΨ⁻¹Λ)⁻¹ is not positive definite".into()))?
        .l()
        .diagonal()
        .map(|v| 2.0 * v.ln())
        .sum();
    let log_det = psi.map(|v| v.ln()).sum() + log_det_a;
    let t = cov * &w;
    let inner = w.transpose() * t;
    let trace = (0..p).map(|j| cov[(j, j)] / psi[j]).sum::<f64>() - (a_inv * inner).trace();
    let ll = -0.5 * n as f64 * (p as f64 * LN_2PI + log_det + trace);
    if !ll.is_finite() {
        return Err(Error::Numeric("factor-analysis log-likelihood is not finite".into()));
    }
    Ok(ll)
}

/// One EM step; returns the updated `(Λ, Ψ)`.
fn em_step(cov: &DMatrix<f64>, loadings: &DMatrix<f64>, psi: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (a_inv, w) = woodbury_core(loadings, psi)?;
    // β = A⁻¹ Λᵀ Ψ⁻¹ ; S βᵀ = S W A⁻¹
    let s_beta_t = cov * &w * &a_inv;
    let beta = &a_inv * w.transpose();
    let c = &a_inv + &beta * &s_beta_t;
    let c_inv = c
        .cholesky()
        .ok_or_else(|| Error::Numeric("EM second-moment matrix is not positive definite".into()))?
        .inverse();
    let new_loadings = &s_beta_t * c_inv;
    let p = cov.nrows();
    let new_psi = DVector::from_fn(p, |j, _| {
        let s = cov[(j, j)];
        let explained = new_loadings.row(j).dot(&s_beta_t.row(j));
        (s - explained).max(psi_floor(s))
    });
    Ok((new_loadings, new_psi))
}

/// Fits `k` factors by EM starting from probabilistic PCA.
pub fn fit_standard_fa_with(workspace: &FaWorkspace, k: usize, max_em_iter: usize, tol: f64) -> Result<StandardFaFit> {
    let p = workspace.p();
    if k == 0 || k >= p {
        return Err(Error::Usage(format!(
            "factor count must satisfy 1 <= K < p, got K = {k}, p = {p}"
        )));
    }
    let cov = &workspace.cov;
    let (mut loadings, mut psi) = workspace.pca_start(k);
    let mut ll = gaussian_fa_loglik(cov, workspace.n, &loadings, &psi)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_em_iter {
        iterations += 1;
        let (nl, np) = em_step(cov, &loadings, &psi)?;
        let new_ll = gaussian_fa_loglik(cov, workspace.n, &nl, &np)?;
        if new_ll < ll - 1e-8 * ll.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "EM log-likelihood decreased from {ll} to {new_ll} at iteration {iterations}"
            )));
        }
        let change = (new_ll - ll).abs();
        loadings = nl;
        psi = np;
        ll = new_ll;
        trace.push(ll);
        if change <= tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(StandardFaFit {
        loadings,
        psi,
        loglik: ll,
        n_params: standard_param_count(p, k),
        iterations,
        converged,
        loglik_trace: trace,
    })
}

/// Maximum-likelihood factor analysis with `k` factors.
pub fn fit_standard_fa(data: &DataMatrix, k: usize, max_em_iter: usize, tol: f64) -> Result<StandardFaFit> {
    let ws = FaWorkspace::new(data)?;
    fit_standard_fa_with(&ws, k, max_em_iter, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::correlation_mse;
    use crate::model::covariance_to_correlation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulate(rng: &mut ChaCha8Rng, n: usize, lam: &DMatrix<f64>, psi: &DVector<f64>) -> DataMatrix {
        let (p, k) = lam.shape();
        let x = DMatrix::from_fn(n, p, |_, _| 0.0);
        let mut x = x;
        for i in 0..n {
            let u = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mean = lam * u;
            for j in 0..p {
                x[(i, j)] = mean[j] + psi[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
        DataMatrix::unlabeled(x).unwrap().center()
    }

    #[test]
    fn loglik_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lam = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let psi = DVector::from_fn(5, |_, _| rng.random_range(0.3..1.0));
        let data = simulate(&mut rng, 50, &lam, &psi);
        let ws = FaWorkspace::new(&data).unwrap();
        let sigma = &lam * lam.transpose() + DMatrix::from_diagonal(&psi);
        let inv = sigma.clone().try_inverse().unwrap();
        let mut dense = 0.0;
        for i in 0..data.n() {
            let x = data.values().row(i).transpose();
            dense += -0.5 * (5.0 * LN_2PI + sigma.determinant().ln() + (x.transpose() * &inv * &x)[(0, 0)]);
        }
        let ll = gaussian_fa_loglik(&ws.cov, data.n(), &lam, &psi).unwrap();
        assert!((ll - dense).abs() < 1e-9 * dense.abs());
    }

    #[test]
    fn em_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 1..4 {
            let lam = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
            let psi = DVector::from_fn(8, |_, _| rng.random_range(0.2..1.0));
            let data = simulate(&mut rng, 80, &lam, &psi);
            let fit = fit_standard_fa(&data, k, 300, 1e-12).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs());
            }
            assert!(fit.psi.iter().all(|&v| v > 0.0));
            assert_eq!(fit.n_params, 8 * k + 8);
        }
    }

    #[test]
    fn pure_noise_gives_small_loadings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lam = DMatrix::zeros(5, 1);
        let psi = DVector::from_element(5, 1.0);
        let data = simulate(&mut rng, 2000, &lam, &psi);
        let fit = fit_standard_fa(&data, 1, 1000, 1e-10).unwrap();
        let llt = &fit.loadings * fit.loadings.transpose();
        assert!(llt.norm() < 0.15 * fit.psi.mean(), "{}", llt.norm());
        // close to the diagonal-Gaussian log-likelihood
        let ws = FaWorkspace::new(&data).unwrap();
        let diag = DVector::from_fn(5, |j, _| ws.cov[(j, j)]);
        let ll_diag = gaussian_fa_loglik(&ws.cov, data.n(), &DMatrix::zeros(5, 1), &diag).unwrap();
        assert!(fit.loglik >= ll_diag - 1e-6);
        assert!(fit.loglik - ll_diag < 10.0);
    }

    #[test]
    fn one_factor_covariance_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lam = DMatrix::from_column_slice(5, 1, &[0.9, 0.8, -0.7, 0.6, 0.5]);
        let psi = DVector::from_vec(vec![0.3, 0.4, 0.5, 0.6, 0.7]);
        let data = simulate(&mut rng, 2000, &lam, &psi);
        let fit = fit_standard_fa(&data, 1, 1000, 1e-10).unwrap();
        let est = &fit.loadings * fit.loadings.transpose() + DMatrix::from_diagonal(&fit.psi);
        let truth = &lam * lam.transpose() + DMatrix::from_diagonal(&psi);
        let mse = correlation_mse(
            &covariance_to_correlation(&truth).unwrap(),
            &covariance_to_correlation(&est).unwrap(),
        )
        .unwrap();
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn too_many_factors_is_a_usage_error() {
        let data = DataMatrix::unlabeled(DMatrix::from_fn(10, 3, |i, j| (i * j) as f64 + (i % 3) as f64))
            .unwrap()
            .center();
        assert!(matches!(fit_standard_fa(&data, 3, 10, 1e-6), Err(Error::Usage(_))));
        assert!(matches!(fit_standard_fa(&data, 0, 10, 1e-6), Err(Error::Usage(_))));
    }
}
