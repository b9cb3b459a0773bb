//! Seeded k-means on matrix rows, used to start chains at a fixed `G`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|k| (points[(i, k)] - centroids[(c, k)]).powi(2))
        .sum()
}

fn plus_plus<R: Rng>(points: &DMatrix<f64>, g: usize, rng: &mut R) -> DMatrix<f64> {
    let (m, d) = points.shape();
    let mut centroids = DMatrix::zeros(g, d);
    let first = rng.random_range(0..m);
    centroids.set_row(0, &points.row(first));
    let mut nearest: Vec<f64> = (0..m).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..g {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centroids.set_row(c, &points.row(pick));
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>, max_iter: usize) -> KMeans {
    let (m, d) = points.shape();
    let g = centroids.nrows();
    let mut assignment = vec![0usize; m];
    for iter in 0..max_iter {
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let best = (0..g)
                .min_by(|&a, &b| sq_dist(points, i, &centroids, a).total_cmp(&sq_dist(points, i, &centroids, b)))
                .unwrap();
            if best != *slot || iter == 0 {
                changed |= best != *slot;
                *slot = best;
            }
        }
        let mut sums = DMatrix::zeros(g, d);
        let mut counts = vec![0usize; g];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for k in 0..d {
                sums[(c, k)] += points[(i, k)];
            }
        }
        // refill empty clusters with the point farthest from its centroid
        for c in 0..g {
            if counts[c] == 0 {
                let far = (0..m).filter(|&i| counts[assignment[i]] > 1).max_by(|&a, &b| {
                    sq_dist(points, a, &centroids, assignment[a]).total_cmp(&sq_dist(
                        points,
                        b,
                        &centroids,
                        assignment[b],
                    ))
                });
                if let Some(i) = far {
                    let old = assignment[i];
                    counts[old] -= 1;
                    for k in 0..d {
                        sums[(old, k)] -= points[(i, k)];
                        sums[(c, k)] = points[(i, k)];
                    }
                    assignment[i] = c;
                    counts[c] = 1;
                    changed = true;
                }
            }
        }
        for c in 0..g {
            if counts[c] > 0 {
                for k in 0..d {
                    centroids[(c, k)] = sums[(c, k)] / counts[c] as f64;
                }
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    let inertia = (0..m).map(|i| sq_dist(points, i, &centroids, assignment[i])).sum();
    KMeans {
        centroids,
        assignment,
        inertia,
    }
}

/// Best of `restarts` k-means++ runs by within-cluster sum of squares.
pub fn kmeans(points: &DMatrix<f64>, g: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let m = points.nrows();
    if g == 0 || g > m {
        return Err(Error::Usage(format!(
            "k-means needs 1 <= G <= rows, got G = {g} with {m} rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let start = plus_plus(points, g, &mut rng);
        let fit = lloyd(points, start, 100);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_groups_on_a_line() {
        let pts = DMatrix::from_column_slice(6, 1, &[0.0, 0.1, 0.2, 5.0, 5.1, 5.2]);
        let km = kmeans(&pts, 2, 5, 1).unwrap();
        assert_eq!(km.assignment[0], km.assignment[2]);
        assert_eq!(km.assignment[3], km.assignment[5]);
        assert_ne!(km.assignment[0], km.assignment[3]);
        assert!((km.inertia - 0.04).abs() < 1e-12);
    }

    #[test]
    fn every_cluster_is_used() {
        let pts = DMatrix::from_column_slice(5, 1, &[0.0, 0.0, 0.0, 0.0, 1.0]);
        let km = kmeans(&pts, 3, 2, 2).unwrap();
        for c in 0..3 {
            assert!(km.assignment.contains(&c));
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let pts = DMatrix::from_fn(30, 2, |i, k| ((i * 7 + k * 3) % 11) as f64);
        assert_eq!(kmeans(&pts, 4, 3, 9).unwrap(), kmeans(&pts, 4, 3, 9).unwrap());
        assert!(kmeans(&pts, 31, 1, 0).is_err());
    }
}
