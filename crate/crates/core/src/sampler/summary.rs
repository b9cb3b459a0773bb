//! Posterior summaries of a chain.
//!
//! Cluster labels switch freely between draws (no identifiability constraints are
//! imposed), so the reported correlation, co-clustering and partition estimate are
//! all label-invariant. The posterior mean of `Λ_c` is label-variant and flagged so.

use nalgebra::{DMatrix, DVector};

use super::chain::ChainTrace;
use crate::error::{Error, Result};
use crate::model::{covariance_to_correlation, model_covariance, Partition, Uniquenesses};

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimates {
    /// Posterior mean of `Λ̃Λ̃ᵀ + Ψ`.
    pub covariance: DMatrix<f64>,
    /// Correlation matrix of the posterior mean covariance.
    pub correlation: DMatrix<f64>,
    /// Posterior probability that two variables share a cluster.
    pub coclustering: DMatrix<f64>,
    /// Retained draw minimizing the posterior expected Binder loss.
    pub partition: Partition,
    pub partition_draw: usize,
    pub binder_loss: f64,
    /// Retained draw with the highest unnormalized log posterior.
    pub map_draw: usize,
    pub psi_mean: DVector<f64>,
    pub loadings_mean: DMatrix<f64>,
    /// Always true: `loadings_mean` averages rows whose labels may switch.
    pub loadings_label_variant: bool,
}

/// Posterior co-clustering matrix over a set of partitions.
pub fn coclustering_matrix<'a, I>(partitions: I, p: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a Partition>,
{
    let mut acc = DMatrix::zeros(p, p);
    let mut count = 0usize;
    for part in partitions {
        count += 1;
        let a = part.assignment();
        for j in 0..p {
            for jj in (j + 1)..p {
                if a[j] == a[jj] {
                    acc[(j, jj)] += 1.0;
                }
            }
        }
    }
    if count > 0 {
        acc /= count as f64;
    }
    let sym = &acc + acc.transpose();
    let mut out = sym;
    out.fill_diagonal(1.0);
    out
}

/// Expected Binder loss of `part` (unit costs) against co-clustering probabilities.
pub fn binder_loss(part: &Partition, coclustering: &DMatrix<f64>) -> f64 {
    let a = part.assignment();
    let p = a.len();
    let mut loss = 0.0;
    for j in 0..p {
        for jj in (j + 1)..p {
            let pi = coclustering[(j, jj)];
            loss += if a[j] == a[jj] { 1.0 - pi } else { pi };
        }
    }
    loss
}

/// Summarizes the retained draws of a chain.
pub fn point_estimates(trace: &ChainTrace) -> Result<PointEstimates> {
    let draws = &trace.draws;
    if draws.is_empty() {
        return Err(Error::Usage("cannot summarize a chain without retained draws".into()));
    }
    let p = draws[0].partition.p();
    let d = draws.len() as f64;
    let mut covariance = DMatrix::zeros(p, p);
    let mut psi_mean = DVector::zeros(p);
    let mut loadings_mean = DMatrix::zeros(draws[0].loadings.n_clusters(), draws[0].loadings.n_factors());
    for draw in draws {
        let psi = Uniquenesses::new(draw.psi.clone())?;
        covariance += model_covariance(&draw.partition, &draw.loadings, &psi)?;
        psi_mean += &draw.psi;
        loadings_mean += draw.loadings.matrix();
    }
    covariance /= d;
    psi_mean /= d;
    loadings_mean /= d;
    let correlation = covariance_to_correlation(&covariance)?;

    let coclustering = coclustering_matrix(draws.iter().map(|d| &d.partition), p);
    let map_draw = draws
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.log_posterior.total_cmp(&b.1.log_posterior))
        .map(|(i, _)| i)
        .unwrap_or(0);
    // Binder minimizer, ties broken toward the higher posterior draw
    let mut partition_draw = map_draw;
    let mut best = binder_loss(&draws[map_draw].partition, &coclustering);
    for (i, draw) in draws.iter().enumerate() {
        let loss = binder_loss(&draw.partition, &coclustering);
        if loss < best - 1e-12 {
            best = loss;
            partition_draw = i;
        }
    }

    Ok(PointEstimates {
        covariance,
        correlation,
        coclustering,
        partition: draws[partition_draw].partition.clone(),
        partition_draw,
        binder_loss: best,
        map_draw,
        psi_mean,
        loadings_mean,
        loadings_label_variant: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterLoadings, DataMatrix, FactorScores, Hyperparameters, SamplerState};
    use crate::sampler::chain::{run_chain, Draw, SamplerConfig};
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace_with(draws: Vec<Draw>) -> ChainTrace {
        let data = DataMatrix::unlabeled(dmatrix![1.0, 0.0, 2.0; 0.0, 1.0, -1.0])
            .unwrap()
            .center();
        let state = SamplerState::new(
            &data,
            ClusterLoadings::zeros(2, 1),
            Uniquenesses::constant(3, 1.0).unwrap(),
            Partition::new(vec![0, 0, 1], 2).unwrap(),
            FactorScores::zeros(2, 1),
        )
        .unwrap();
        ChainTrace {
            draws,
            loglik_trace: vec![],
            accept_count: 0,
            attempt_count: 0,
            final_state: state,
            config: SamplerConfig::default(),
        }
    }

    fn draw(assign: Vec<usize>, lc: DMatrix<f64>, psi: Vec<f64>, lp: f64) -> Draw {
        Draw {
            iteration: 0,
            loadings: ClusterLoadings::new(lc).unwrap(),
            psi: DVector::from_vec(psi),
            partition: Partition::new(assign, 2).unwrap(),
            loglik: lp,
            log_posterior: lp,
        }
    }

    #[test]
    fn single_draw_estimates_equal_the_draw() {
        let d = draw(vec![0, 0, 1], dmatrix![0.8; -0.3], vec![0.5, 0.7, 0.2], -3.0);
        let est = point_estimates(&trace_with(vec![d.clone()])).unwrap();
        let sigma = model_covariance(&d.partition, &d.loadings, &Uniquenesses::new(d.psi.clone()).unwrap()).unwrap();
        assert_eq!(est.covariance, sigma);
        assert_eq!(est.correlation, covariance_to_correlation(&sigma).unwrap());
        assert_eq!(est.partition, d.partition);
        assert_eq!(est.psi_mean, d.psi);
        assert_eq!(&est.loadings_mean, d.loadings.matrix());
        assert!(est.loadings_label_variant);
        assert_eq!(est.binder_loss, 0.0);
    }

    #[test]
    fn coclustering_properties() {
        let draws = vec![
            draw(vec![0, 0, 1], dmatrix![1.0; 0.0], vec![1.0; 3], -1.0),
            draw(vec![0, 1, 1], dmatrix![1.0; 0.0], vec![1.0; 3], -2.0),
            draw(vec![1, 1, 0], dmatrix![1.0; 0.0], vec![1.0; 3], -5.0),
        ];
        let est = point_estimates(&trace_with(draws)).unwrap();
        let c = &est.coclustering;
        assert_eq!(c, &c.transpose());
        for j in 0..3 {
            assert_eq!(c[(j, j)], 1.0);
        }
        assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((c[(0, 1)] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(est.map_draw, 0);
        // draws 0 and 2 are the same partition up to labels; they minimize Binder loss
        assert_eq!(
            est.partition.canonical(),
            Partition::new(vec![0, 0, 1], 2).unwrap().canonical()
        );
    }

    #[test]
    fn empty_trace_is_a_usage_error() {
        assert!(matches!(point_estimates(&trace_with(vec![])), Err(Error::Usage(_))));
    }

    #[test]
    fn duplicated_columns_end_up_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 60;
        let mut x = DMatrix::zeros(n, 3);
        for i in 0..n {
            let f: f64 = rng.random_range(-2.0..2.0);
            let a = f + rng.random_range(-0.4..0.4);
            x[(i, 0)] = a;
            x[(i, 1)] = a;
            x[(i, 2)] = -0.5 * f + rng.random_range(-1.0..1.0);
        }
        let data = DataMatrix::unlabeled(x).unwrap().center();
        let hyper = Hyperparameters::default_for(&data).unwrap();
        let init = SamplerState::new(
            &data,
            ClusterLoadings::new(dmatrix![0.5; -0.5]).unwrap(),
            Uniquenesses::constant(3, 0.5).unwrap(),
            Partition::new(vec![0, 1, 0], 2).unwrap(),
            FactorScores::zeros(n, 1),
        )
        .unwrap();
        let cfg = SamplerConfig {
            n_iter: 1500,
            burn_in: 500,
            thin: 2,
            seed: 4,
            moves_per_sweep: Some(2),
            ..Default::default()
        };
        let trace = run_chain(&data, 1, 2, &hyper, &cfg, init).unwrap();
        let est = point_estimates(&trace).unwrap();
        assert_eq!(est.partition.cluster_of(0), est.partition.cluster_of(1));
        assert!(est.coclustering[(0, 1)] > 0.9);
    }
}
