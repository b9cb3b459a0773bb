//! Model-based clustering of loading rows.
//!
//! Gaussian mixtures are fitted by EM for every `G` up to a bound under three
//! covariance structures, each started from the matching cut of a Ward
//! dendrogram, and the `(G, structure)` pair with the largest BIC wins.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovarianceModel {
    /// One variance shared by all components and dimensions.
    SphericalEqual,
    /// One variance per component.
    SphericalVarying,
    /// One variance per component and dimension.
    DiagonalVarying,
}

impl CovarianceModel {
    pub const ALL: [CovarianceModel; 3] = [
        CovarianceModel::SphericalEqual,
        CovarianceModel::SphericalVarying,
        CovarianceModel::DiagonalVarying,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            CovarianceModel::SphericalEqual => "EII",
            CovarianceModel::SphericalVarying => "VII",
            CovarianceModel::DiagonalVarying => "VVI",
        }
    }

    fn variance_params(&self, g: usize, d: usize) -> usize {
        match self {
            CovarianceModel::SphericalEqual => 1,
            CovarianceModel::SphericalVarying => g,
            CovarianceModel::DiagonalVarying => g * d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: CovarianceModel,
    pub g: usize,
    pub weights: Vec<f64>,
    pub means: DMatrix<f64>,
    /// `G × d` variances (columns repeated for spherical models).
    pub variances: DMatrix<f64>,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowClustering {
    /// Canonical 0-based labels, one per row.
    pub assignment: Vec<usize>,
    /// Number of clusters the assignment uses.
    pub g: usize,
    pub model: CovarianceModel,
    pub bic: f64,
    /// `(G, model, BIC)` for every fit that converged without degenerating.
    pub candidates: Vec<(usize, CovarianceModel, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

/// Ward agglomeration of the rows. Merges are returned in nondecreasing height, as
/// pairs of representative row indices.
pub fn ward_merges(points: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let m = points.nrows();
    if m < 2 {
        return Vec::new();
    }
    let mut dist = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = (points.row(i) - points.row(j)).norm_squared();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    let mut size = vec![1usize; m];
    let mut active = vec![true; m];
    let mut n_active = m;
    let mut chain: Vec<usize> = Vec::with_capacity(m);
    let mut merges = Vec::with_capacity(m - 1);

    // nearest-neighbor chain; valid because Ward's criterion is reducible
    while n_active > 1 {
        if chain.is_empty() {
            chain.push((0..m).find(|&i| active[i]).unwrap());
        }
        let a = *chain.last().unwrap();
        let prev = if chain.len() >= 2 {
            Some(chain[chain.len() - 2])
        } else {
            None
        };
        let mut best = prev;
        let mut best_d = prev.map(|b| dist[(a, b)]).unwrap_or(f64::INFINITY);
        for c in 0..m {
            if c == a || !active[c] {
                continue;
            }
            if dist[(a, c)] < best_d {
                best_d = dist[(a, c)];
                best = Some(c);
            }
        }
        let b = best.expect("at least two active clusters");
        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (keep, drop) = if a < b { (a, b) } else { (b, a) };
            let (na, nb) = (size[keep] as f64, size[drop] as f64);
            let dab = dist[(keep, drop)];
            for c in 0..m {
                if !active[c] || c == keep || c == drop {
                    continue;
                }
                let nc = size[c] as f64;
                let d = ((na + nc) * dist[(keep, c)] + (nb + nc) * dist[(drop, c)] - nc * dab) / (na + nb + nc);
                dist[(keep, c)] = d;
                dist[(c, keep)] = d;
            }
            size[keep] += size[drop];
            active[drop] = false;
            n_active -= 1;
            merges.push((keep, drop, dab));
        } else {
            chain.push(b);
        }
    }
    merges.sort_by(|x, y| x.2.total_cmp(&y.2));
    merges
}

/// Cuts a Ward dendrogram into `g` clusters; labels are canonical.
pub fn cut_merges(m: usize, merges: &[(usize, usize, f64)], g: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let steps = m.saturating_sub(g.max(1)).min(merges.len());
    for &(a, b, _) in &merges[..steps] {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            parent[rb.max(ra)] = ra.min(rb);
        }
    }
    let roots: Vec<usize> = (0..m).map(|i| find(&mut parent, i)).collect();
    canonical_labels(&roots)
}

pub(crate) fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Params {
    weights: Vec<f64>,
    means: DMatrix<f64>,
    variances: DMatrix<f64>,
}

fn m_step(points: &DMatrix<f64>, resp: &DMatrix<f64>, model: CovarianceModel, floor: f64) -> Option<Params> {
    let (m, d) = points.shape();
    let g = resp.ncols();
    let nk: Vec<f64> = (0..g).map(|c| resp.column(c).sum()).collect();
    if nk.iter().any(|&v| v <= 1e-10) {
        return None;
    }
    let weights: Vec<f64> = nk.iter().map(|v| v / m as f64).collect();
    let means = DMatrix::from_fn(g, d, |c, k| {
        (0..m).map(|i| resp[(i, c)] * points[(i, k)]).sum::<f64>() / nk[c]
    });
    // per-component, per-dimension weighted scatter
    let scatter = DMatrix::from_fn(g, d, |c, k| {
        (0..m)
            .map(|i| resp[(i, c)] * (points[(i, k)] - means[(c, k)]).powi(2))
            .sum::<f64>()
    });
    let variances = match model {
        CovarianceModel::SphericalEqual => {
            let v = scatter.sum() / (m * d) as f64;
            DMatrix::from_element(g, d, v)
        }
        CovarianceModel::SphericalVarying => DMatrix::from_fn(g, d, |c, _| scatter.row(c).sum() / (nk[c] * d as f64)),
        CovarianceModel::DiagonalVarying => DMatrix::from_fn(g, d, |c, k| scatter[(c, k)] / nk[c]),
    };
    if variances.iter().any(|&v| v.is_nan() || v <= floor) {
        return None;
    }
    Some(Params {
        weights,
        means,
        variances,
    })
}

/// Returns log-likelihood and fills `resp` with responsibilities.
fn e_step(points: &DMatrix<f64>, params: &Params, resp: &mut DMatrix<f64>) -> f64 {
    let (m, d) = points.shape();
    let g = params.weights.len();
    let mut row = vec![0.0; g];
    let mut ll = 0.0;
    for i in 0..m {
        for (c, slot) in row.iter_mut().enumerate() {
            let mut lp = params.weights[c].ln() - 0.5 * d as f64 * LN_2PI;
            for k in 0..d {
                let v = params.variances[(c, k)];
                let diff = points[(i, k)] - params.means[(c, k)];
                lp -= 0.5 * (v.ln() + diff * diff / v);
            }
            *slot = lp;
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for c in 0..g {
            resp[(i, c)] = (row[c] - lse).exp();
        }
    }
    ll
}

fn variance_scale(points: &DMatrix<f64>) -> f64 {
    let (m, d) = points.shape();
    let mut total = 0.0;
    for k in 0..d {
        let col = points.column(k);
        let mean = col.mean();
        total += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    }
    total / d as f64
}

/// EM for one `(G, model)` pair from a hard initial partition. Returns `None` when
/// a component collapses (empty or vanishing variance) or the model has at least as
/// many parameters as there are rows; such fits get no BIC.
pub fn fit_gmm(
    points: &DMatrix<f64>,
    init: &[usize],
    g: usize,
    model: CovarianceModel,
    opts: &GmmOptions,
) -> Option<GmmFit> {
    let (m, d) = points.shape();
    if g == 0 || g > m || init.len() != m {
        return None;
    }
    let floor = 1e-8 * variance_scale(points);
    let mut resp = DMatrix::zeros(m, g);
    for (i, &c) in init.iter().enumerate() {
        if c >= g {
            return None;
        }
        resp[(i, c)] = 1.0;
    }
    let mut params = m_step(points, &resp, model, floor)?;
    let mut ll = e_step(points, &params, &mut resp);
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        params = m_step(points, &resp, model, floor)?;
        let new_ll = e_step(points, &params, &mut resp);
        let change = (new_ll - ll).abs();
        ll = new_ll;
        if change <= opts.tol * ll.abs().max(1.0) {
            break;
        }
    }
    let n_params = g * d + (g - 1) + model.variance_params(g, d);
    // more free parameters than rows makes the likelihood meaningless
    if !ll.is_finite() || n_params >= m {
        return None;
    }
    let bic = 2.0 * ll - n_params as f64 * (m as f64).ln();
    let assignment = (0..m)
        .map(|i| {
            (0..g)
                .max_by(|&a, &b| resp[(i, a)].total_cmp(&resp[(i, b)]).then(b.cmp(&a)))
                .unwrap()
        })
        .collect();
    Some(GmmFit {
        model,
        g,
        weights: params.weights,
        means: params.means,
        variances: params.variances,
        loglik: ll,
        n_params,
        bic,
        assignment,
        iterations,
    })
}

/// Clusters the rows of a `p × K` loading matrix, selecting `G ∈ 1..=g_max` and the
/// covariance structure by BIC.
pub fn cluster_loading_rows(loadings: &DMatrix<f64>, g_max: usize) -> Result<RowClustering> {
    cluster_loading_rows_with(loadings, g_max, &GmmOptions::default())
}

pub fn cluster_loading_rows_with(loadings: &DMatrix<f64>, g_max: usize, opts: &GmmOptions) -> Result<RowClustering> {
    let m = loadings.nrows();
    if m < 2 {
        return Err(Error::Usage("row clustering needs at least two rows".into()));
    }
    if g_max == 0 {
        return Err(Error::Usage("g_max must be at least 1".into()));
    }
    let single = || RowClustering {
        assignment: vec![0; m],
        g: 1,
        model: CovarianceModel::SphericalEqual,
        bic: f64::NAN,
        candidates: Vec::new(),
    };
    if variance_scale(loadings) <= 0.0 {
        return Ok(single());
    }
    let merges = ward_merges(loadings);
    let mut candidates = Vec::new();
    let mut best: Option<GmmFit> = None;
    for g in 1..=g_max.min(m) {
        let init = cut_merges(m, &merges, g);
        for model in CovarianceModel::ALL {
            if let Some(fit) = fit_gmm(loadings, &init, g, model, opts) {
                candidates.push((g, model, fit.bic));
                if best.as_ref().is_none_or(|b| fit.bic > b.bic) {
                    best = Some(fit);
                }
            }
        }
    }
    let Some(best) = best else {
        return Ok(single());
    };
    let assignment = canonical_labels(&best.assignment);
    let g = assignment.iter().max().map(|v| v + 1).unwrap_or(1);
    Ok(RowClustering {
        assignment,
        g,
        model: best.model,
        bic: best.bic,
        candidates,
    })
}
