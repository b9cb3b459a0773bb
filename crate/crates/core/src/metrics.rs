//! Comparison metrics for correlation matrices and partitions, and cluster-wise
//! regression.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DataMatrix, Partition};

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::Usage(format!(
            "matrices must be square and equally sized, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared difference over the lower triangle including the diagonal.
pub fn correlation_mse(r: &DMatrix<f64>, r_hat: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(r, r_hat)?;
    let p = r.nrows();
    if p == 0 {
        return Err(Error::Usage("empty matrices".into()));
    }
    let mut sum = 0.0;
    for j in 0..p {
        for jj in 0..=j {
            sum += (r[(j, jj)] - r_hat[(j, jj)]).powi(2);
        }
    }
    Ok(sum / (p * (p + 1) / 2) as f64)
}

/// RV coefficient `tr(AᵀB) / sqrt(tr(AᵀA) tr(BᵀB))`.
pub fn rv_coefficient(r: &DMatrix<f64>, r_hat: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(r, r_hat)?;
    let aa = r.norm_squared();
    let bb = r_hat.norm_squared();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidInput("RV coefficient of a zero matrix".into()));
    }
    Ok(r.dot(r_hat) / (aa * bb).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionComparison {
    /// `confusion[a][b]` counts items labelled `a` in the first partition and `b`
    /// in the second. Rows and columns follow first-appearance label order.
    pub confusion: Vec<Vec<u64>>,
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub ari: f64,
}

fn choose2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

fn dense_labels(a: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut order = Vec::new();
    let mut map = std::collections::HashMap::new();
    let dense = a
        .iter()
        .map(|l| {
            *map.entry(*l).or_insert_with(|| {
                order.push(*l);
                order.len() - 1
            })
        })
        .collect();
    (dense, order)
}

fn ari_from_table(table: &[Vec<u64>], n: usize) -> f64 {
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..table.first().map_or(0, |r| r.len()))
        .map(|c| table.iter().map(|r| r[c]).sum())
        .collect();
    let index: i128 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: i128 = rows.iter().map(|&v| choose2(v)).sum();
    let sum_b: i128 = cols.iter().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    // (index - E) / (max - E) with E = sum_a sum_b / total, scaled by 2 total so
    // both sides are integers and only the final division rounds
    let num = 2 * (index * total - sum_a * sum_b);
    let den = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
    if den == 0 {
        // both partitions trivial in the same way (all singletons or one block)
        return 1.0;
    }
    num as f64 / den as f64
}

/// Cross-tabulation of two labelings, with their ARI.
pub fn cross_tabulate(a: &[usize], b: &[usize]) -> Result<PartitionComparison> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "partitions have different lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Usage("partitions need at least two items".into()));
    }
    let (da, row_labels) = dense_labels(a);
    let (db, col_labels) = dense_labels(b);
    let mut confusion = vec![vec![0u64; col_labels.len()]; row_labels.len()];
    for (&x, &y) in da.iter().zip(&db) {
        confusion[x][y] += 1;
    }
    let ari = ari_from_table(&confusion, a.len());
    Ok(PartitionComparison {
        confusion,
        row_labels,
        col_labels,
        ari,
    })
}

pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    Ok(cross_tabulate(a, b)?.ari)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRegression {
    pub cluster: usize,
    pub n_vars: usize,
    pub r_squared: Option<f64>,
    pub adj_r_squared: Option<f64>,
    /// Too few observations for the cluster size; no fit attempted.
    pub skipped: bool,
    /// Design was rank-deficient and the minimum-norm solution was used.
    pub rank_deficient: bool,
}

/// OLS of `response` on each cluster's columns plus an intercept.
pub fn cluster_regression(
    data: &DataMatrix,
    partition: &Partition,
    response: &DVector<f64>,
) -> Result<Vec<ClusterRegression>> {
    let n = data.n();
    if response.len() != n {
        return Err(Error::Usage(format!(
            "response has {} rows, data has {n}",
            response.len()
        )));
    }
    if partition.p() != data.p() {
        return Err(Error::Usage(format!(
            "partition covers {} variables, data has {}",
            partition.p(),
            data.p()
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response contains non-finite values".into()));
    }
    let ymean = response.mean();
    let yc = response.map(|v| v - ymean);
    let tss = yc.norm_squared();
    let x = data.values();
    let mut out = Vec::with_capacity(partition.n_clusters());
    for g in 0..partition.n_clusters() {
        let members = partition.members(g);
        let ng = members.len();
        if ng == 0 || n <= ng + 1 {
            out.push(ClusterRegression {
                cluster: g,
                n_vars: ng,
                r_squared: None,
                adj_r_squared: None,
                skipped: true,
                rank_deficient: false,
            });
            continue;
        }
        // centring both sides absorbs the intercept
        let mut design = x.select_columns(&members);
        for mut col in design.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * (n.max(ng) as f64) * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let beta = svd
            .solve(&yc, tol)
            .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
        let rss = (&yc - &design * beta).norm_squared();
        let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
        let adj = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - ng as f64 - 1.0);
        out.push(ClusterRegression {
            cluster: g,
            n_vars: ng,
            r_squared: Some(r2),
            adj_r_squared: Some(adj),
            skipped: false,
            rank_deficient: rank < ng,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn mse_hand_cases() {
        let r = DMatrix::<f64>::identity(2, 2);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(correlation_mse(&r, &r).unwrap(), 0.0);
        assert_eq!(correlation_mse(&r, &ones).unwrap(), 1.0 / 3.0);
        assert_eq!(correlation_mse(&ones, &r).unwrap(), 1.0 / 3.0);
        assert!(correlation_mse(&r, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn rv_hand_cases() {
        let i4 = DMatrix::<f64>::identity(4, 4);
        let j4 = DMatrix::from_element(4, 4, 1.0);
        assert_eq!(rv_coefficient(&i4, &j4).unwrap(), 0.5);
        let r = dmatrix![1.0, 0.3; 0.3, 1.0];
        assert!((rv_coefficient(&r, &r).unwrap() - 1.0).abs() < 1e-15);
        let a = rv_coefficient(&(&r * 2.5), &(&j4.view((0, 0), (2, 2)) * 0.1)).unwrap();
        let b = rv_coefficient(&r, &j4.view((0, 0), (2, 2)).into_owned()).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(
            rv_coefficient(&r, &DMatrix::zeros(2, 2)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ari_hand_cases() {
        // Rand index 1/3, expected index 5/9
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(), -0.5);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 2], &[5, 5, 3, 9]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0, 1], &[0, 1, 1]).is_err());
    }

    #[test]
    fn ari_near_zero_for_independent_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<usize> = (0..5000).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<usize> = (0..5000).map(|_| rng.random_range(0..4)).collect();
        assert!(adjusted_rand_index(&a, &b).unwrap().abs() < 0.01);
    }

    #[test]
    fn cross_tab_shape() {
        let a = [0, 0, 1, 1, 1, 2];
        let b = [1, 1, 0, 0, 2, 2];
        let ct = cross_tabulate(&a, &b).unwrap();
        assert_eq!(ct.confusion, vec![vec![2, 0, 0], vec![0, 2, 1], vec![0, 0, 1]]);
        let rows: Vec<u64> = ct.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![2, 3, 1]);
        assert_eq!(ct.ari, adjusted_rand_index(&a, &b).unwrap());
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn exact_response_gives_unit_adjusted_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_data(&mut rng, 50, 4);
        let data = DataMatrix::unlabeled(x.clone()).unwrap();
        let part = Partition::new(vec![0, 1, 1, 0], 2).unwrap();
        let y = x.column(3).into_owned();
        let res = cluster_regression(&data, &part, &y).unwrap();
        assert!((res[0].adj_r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert!(!res[0].rank_deficient);
    }

    #[test]
    fn null_regression_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_data(&mut rng, 1000, 5);
        let y = DVector::from_fn(1000, |_, _| rng.sample(StandardNormal));
        let data = DataMatrix::unlabeled(x).unwrap();
        let res = cluster_regression(&data, &Partition::single(5), &y).unwrap();
        assert!(res[0].adj_r_squared.unwrap().abs() < 0.02);
    }

    #[test]
    fn irrelevant_variable_does_not_help_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut diff = 0.0;
        let reps = 400;
        for _ in 0..reps {
            let x = random_data(&mut rng, 30, 3);
            let y = DVector::from_fn(30, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
            let data = DataMatrix::unlabeled(x).unwrap();
            let small = cluster_regression(&data, &Partition::new(vec![0, 0, 1], 2).unwrap(), &y).unwrap();
            let big = cluster_regression(&data, &Partition::single(3), &y).unwrap();
            diff += big[0].adj_r_squared.unwrap() - small[0].adj_r_squared.unwrap();
        }
        assert!(diff / reps as f64 <= 0.005);
    }

    #[test]
    fn tiny_clusters_are_skipped_and_collinear_flagged() {
        let x = dmatrix![1.0, 2.0, 2.0; 2.0, 4.0, 1.0; 3.0, 6.0, 0.0; 4.0, 8.0, 5.0; 0.0, 0.0, 1.0];
        let data = DataMatrix::unlabeled(x).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 0.5]);
        let res = cluster_regression(&data, &Partition::new(vec![0, 0, 1], 2).unwrap(), &y).unwrap();
        assert!(res[0].rank_deficient);
        assert!(!res[0].skipped);
        let all = cluster_regression(&data, &Partition::new(vec![0, 0, 0], 1).unwrap(), &y);
        assert!(!all.unwrap()[0].skipped);
        let x4 = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 + (i * j) as f64 * 0.1);
        let data4 = DataMatrix::unlabeled(x4).unwrap();
        let res4 = cluster_regression(
            &data4,
            &Partition::single(3),
            &DVector::from_vec(vec![1.0, 0.0, 2.0, 1.0]),
        )
        .unwrap();
        assert!(res4[0].skipped);
        assert_eq!(res4[0].adj_r_squared, None);
    }
}
