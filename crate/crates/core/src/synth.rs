//! Synthetic data from the clustered-loadings model and the replication study.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_model_with, FitOptions};
use crate::metrics::{adjusted_rand_index, correlation_mse, rv_coefficient};
use crate::model::{
    covariance_to_correlation, model_covariance, ClusterLoadings, DataMatrix, Hyperparameters, Partition, Uniquenesses,
};
use crate::sampler::SamplerConfig;
use crate::seed::derive_seed;
use crate::select::fa::FaWorkspace;
use crate::select::init::{initialize_kg_with, DEFAULT_G_MAX, DEFAULT_K_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDesign {
    pub n: usize,
    pub p: usize,
    pub k_true: usize,
    pub g_true: usize,
    pub replicates: usize,
    pub seed: u64,
    pub k_grid: Vec<usize>,
    pub g_grid: Vec<usize>,
    /// Standard deviation of the true cluster loading entries.
    pub loading_sd: f64,
    /// Minimum Euclidean distance between true cluster loading rows.
    pub min_row_gap: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub max_resamples: usize,
    /// Bounds handed to the `(K, G)` initialization on each replicate.
    pub k_max: usize,
    pub g_max: usize,
    /// Skip the initialization step (only the grid is evaluated).
    pub skip_selection: bool,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n: 500,
            p: 40,
            k_true: 3,
            g_true: 5,
            replicates: 20,
            seed: 2024,
            k_grid: vec![2, 3, 4, 5],
            g_grid: vec![3, 4, 5, 6, 7],
            loading_sd: 1.0,
            min_row_gap: 1.0,
            psi_min: 0.2,
            psi_max: 1.0,
            max_resamples: 1000,
            k_max: DEFAULT_K_MAX,
            g_max: DEFAULT_G_MAX,
            skip_selection: false,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.k_grid.is_empty() || self.g_grid.is_empty() {
            return bad("k_grid and g_grid must be non-empty".into());
        }
        if self.n < 2 || self.p < 2 {
            return bad(format!("need n >= 2 and p >= 2, got n = {}, p = {}", self.n, self.p));
        }
        if self.k_true == 0 || self.g_true == 0 || self.g_true > self.p {
            return bad(format!(
                "need K_true >= 1 and 1 <= G_true <= p, got K_true = {}, G_true = {}",
                self.k_true, self.g_true
            ));
        }
        if let Some(k) = self.k_grid.iter().find(|&&k| k == 0 || k >= self.p) {
            return bad(format!("grid K = {k} outside 1..p"));
        }
        if let Some(g) = self.g_grid.iter().find(|&&g| g == 0 || g > self.p) {
            return bad(format!("grid G = {g} outside 1..=p"));
        }
        if !(self.psi_min > 0.0 && self.psi_min <= self.psi_max && self.psi_max.is_finite()) {
            return bad(format!(
                "uniqueness range [{}, {}] is invalid",
                self.psi_min, self.psi_max
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.loading_sd) || self.min_row_gap.is_nan() || self.min_row_gap < 0.0 {
            return bad("loading_sd must be positive and min_row_gap non-negative".into());
        }
        if self.k_max == 0 || self.g_max == 0 {
            return bad("k_max and g_max must be at least 1".into());
        }
        Ok(())
    }
}

/// Study file: a `[design]` table and an optional `[sampler]` table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub design: SimDesign,
    pub sampler: SamplerConfig,
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text)?;
        cfg.design.validate()?;
        cfg.sampler.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub partition: Partition,
    pub loadings: ClusterLoadings,
    pub psi: Uniquenesses,
}

impl Truth {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        model_covariance(&self.partition, &self.loadings, &self.psi)
    }

    pub fn correlation(&self) -> Result<DMatrix<f64>> {
        covariance_to_correlation(&self.covariance()?)
    }
}

fn min_gap(rows: &DMatrix<f64>) -> f64 {
    let g = rows.nrows();
    let mut best = f64::INFINITY;
    for a in 0..g {
        for b in (a + 1)..g {
            best = best.min((rows.row(a) - rows.row(b)).norm());
        }
    }
    best
}

/// Draws a ground truth: a partition with no empty cluster, separated loading rows
/// and uniquenesses from a uniform range.
pub fn generate_truth<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Truth> {
    let (p, g, k) = (design.p, design.g_true, design.k_true);
    if g > p {
        return Err(Error::Config(format!("G_true = {g} exceeds p = {p}")));
    }
    let mut partition = None;
    for _ in 0..design.max_resamples.max(1) {
        let labels: Vec<usize> = (0..p).map(|_| rng.random_range(0..g)).collect();
        let cand = Partition::new(labels, g)?;
        if cand.occupancy().iter().all(|&c| c > 0) {
            partition = Some(cand);
            break;
        }
    }
    let partition = partition.ok_or_else(|| {
        Error::Config(format!(
            "no partition with {g} non-empty clusters after {} draws",
            design.max_resamples
        ))
    })?;
    let normal = Normal::new(0.0, design.loading_sd).map_err(|e| Error::Config(format!("loading_sd: {e}")))?;
    let mut rows = None;
    for _ in 0..design.max_resamples.max(1) {
        let cand = DMatrix::from_fn(g, k, |_, _| normal.sample(rng));
        if min_gap(&cand) >= design.min_row_gap {
            rows = Some(cand);
            break;
        }
    }
    let rows = rows.ok_or_else(|| {
        Error::Config(format!(
            "loading rows never reached the minimum gap {} after {} draws",
            design.min_row_gap, design.max_resamples
        ))
    })?;
    let unif = Uniform::new_inclusive(design.psi_min, design.psi_max)
        .map_err(|e| Error::Config(format!("uniqueness range: {e}")))?;
    let psi = DVector::from_fn(p, |_, _| unif.sample(rng));
    Ok(Truth {
        partition,
        loadings: ClusterLoadings::new(rows)?,
        psi: Uniquenesses::new(psi)?,
    })
}

/// `n` draws of `x = Λ̃u + ε`, centered.
pub fn generate_data<R: Rng + ?Sized>(truth: &Truth, n: usize, rng: &mut R) -> Result<DataMatrix> {
    let p = truth.partition.p();
    let k = truth.loadings.n_factors();
    let u = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let fits = &u * truth.loadings.matrix().transpose();
    let a = truth.partition.assignment();
    let sd: Vec<f64> = truth.psi.vector().iter().map(|v| v.sqrt()).collect();
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            x[(i, j)] = fits[(i, a[j])] + sd[j] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(DataMatrix::unlabeled(x)?.center())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Across-replicate standard deviation (`n − 1` divisor); zero for one value.
    pub sd: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let count = values.len();
        if count == 0 {
            return Stat {
                mean: f64::NAN,
                sd: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, sd, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub k: usize,
    pub g: usize,
    pub ari: f64,
    pub mse: f64,
    pub rv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    /// `(K, G, message)` of grid fits that failed.
    pub failures: Vec<(usize, usize, String)>,
    pub selected: Option<(usize, usize)>,
    pub selection_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub k: usize,
    pub g: usize,
    pub ari: Stat,
    pub mse: Stat,
    pub rv: Stat,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub design: SimDesign,
    pub sampler: SamplerConfig,
    pub cells: Vec<CellSummary>,
    /// `(K, G) → count` of initialization selections.
    pub selections: BTreeMap<(usize, usize), usize>,
    pub selection_failures: usize,
    pub replicates: Vec<ReplicateResult>,
}

impl StudyReport {
    pub fn cell(&self, k: usize, g: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.k == k && c.g == g)
    }

    pub fn selection_rate(&self, k: usize, g: usize) -> f64 {
        let total: usize = self.selections.values().sum();
        if total == 0 {
            return 0.0;
        }
        *self.selections.get(&(k, g)).unwrap_or(&0) as f64 / total as f64
    }
}

/// Seed of replicate `r` in a study seeded with `base`.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, &[r as u64])
}

/// Runs one replicate: truth, data, every grid cell, then the initialization.
pub fn run_replicate(design: &SimDesign, sampler: &SamplerConfig, r: usize) -> Result<ReplicateResult> {
    let seed = replicate_seed(design.seed, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = generate_truth(design, &mut rng)?;
    let data = generate_data(&truth, design.n, &mut rng)?;
    let true_corr = truth.correlation()?;
    let hyper = Hyperparameters::default_for(&data)?;
    let ws = FaWorkspace::new(&data)?;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &k in &design.k_grid {
        for &g in &design.g_grid {
            // chains are further keyed by (K, G) inside the fit
            let cfg = SamplerConfig {
                seed,
                ..sampler.clone()
            };
            let cell = fit_model_with(&ws, &data, k, g, &hyper, &cfg, FitOptions::default()).and_then(|fit| {
                let est = &fit.estimates;
                Ok(CellResult {
                    k,
                    g,
                    ari: adjusted_rand_index(truth.partition.assignment(), est.partition.assignment())?,
                    mse: correlation_mse(&true_corr, &est.correlation)?,
                    rv: rv_coefficient(&true_corr, &est.correlation)?,
                })
            });
            match cell {
                Ok(c) => cells.push(c),
                Err(e) => failures.push((k, g, e.to_string())),
            }
        }
    }
    let (selected, selection_error) = if design.skip_selection {
        (None, None)
    } else {
        match initialize_kg_with(&ws, design.k_max, design.g_max.min(design.p)) {
            Ok(sel) => (Some((sel.k, sel.g)), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(ReplicateResult {
        replicate: r,
        seed,
        cells,
        failures,
        selected,
        selection_error,
    })
}

/// Aggregates replicate results. The output does not depend on their order.
pub fn summarize(design: &SimDesign, sampler: &SamplerConfig, mut replicates: Vec<ReplicateResult>) -> StudyReport {
    replicates.sort_by_key(|r| r.replicate);
    let mut cells = Vec::new();
    for &k in &design.k_grid {
        for &g in &design.g_grid {
            let hits: Vec<&CellResult> = replicates
                .iter()
                .flat_map(|r| r.cells.iter())
                .filter(|c| c.k == k && c.g == g)
                .collect();
            let failures = replicates
                .iter()
                .flat_map(|r| r.failures.iter())
                .filter(|f| f.0 == k && f.1 == g)
                .count();
            let col = |f: fn(&CellResult) -> f64| Stat::of(&hits.iter().map(|c| f(c)).collect::<Vec<_>>());
            cells.push(CellSummary {
                k,
                g,
                ari: col(|c| c.ari),
                mse: col(|c| c.mse),
                rv: col(|c| c.rv),
                failures,
            });
        }
    }
    let mut selections = BTreeMap::new();
    let mut selection_failures = 0;
    for r in &replicates {
        match r.selected {
            Some(kg) => *selections.entry(kg).or_insert(0) += 1,
            None if r.selection_error.is_some() => selection_failures += 1,
            None => {}
        }
    }
    StudyReport {
        design: design.clone(),
        sampler: sampler.clone(),
        cells,
        selections,
        selection_failures,
        replicates,
    }
}

/// Runs every replicate in parallel. A replicate whose data generation fails is
/// recorded as a failure of every grid cell.
pub fn run_study(design: &SimDesign, sampler: &SamplerConfig) -> Result<StudyReport> {
    design.validate()?;
    sampler.validate()?;
    let results: Vec<ReplicateResult> = (0..design.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(design, sampler, r).unwrap_or_else(|e| ReplicateResult {
                replicate: r,
                seed: replicate_seed(design.seed, r),
                cells: Vec::new(),
                failures: design
                    .k_grid
                    .iter()
                    .flat_map(|&k| design.g_grid.iter().map(move |&g| (k, g)))
                    .map(|(k, g)| (k, g, e.to_string()))
                    .collect(),
                selected: None,
                selection_error: Some(e.to_string()),
            })
        })
        .collect();
    Ok(summarize(design, sampler, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimDesign {
        SimDesign {
            n: 200,
            p: 5,
            k_true: 2,
            g_true: 3,
            ..Default::default()
        }
    }

    #[test]
    fn truth_has_no_empty_cluster_and_spd_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let design = SimDesign::default();
        for _ in 0..100 {
            let t = generate_truth(&design, &mut rng).unwrap();
            assert_eq!(t.partition.occupancy().iter().sum::<usize>(), 40);
            assert!(t.partition.occupancy().iter().all(|&c| c >= 1));
            assert!(min_gap(t.loadings.matrix()) >= design.min_row_gap);
            assert!(t.covariance().unwrap().cholesky().is_some());
        }
    }

    #[test]
    fn single_cluster_shares_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let design = SimDesign { g_true: 1, ..small() };
        let t = generate_truth(&design, &mut rng).unwrap();
        assert!(t.partition.assignment().iter().all(|&a| a == 0));
        assert_eq!(t.loadings.n_clusters(), 1);
    }

    #[test]
    fn infeasible_gap_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let design = SimDesign {
            min_row_gap: 100.0,
            max_resamples: 20,
            ..small()
        };
        assert!(matches!(generate_truth(&design, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn sample_covariance_matches_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = generate_truth(&small(), &mut rng).unwrap();
        let n = 100_000;
        let data = generate_data(&t, n, &mut rng).unwrap();
        let s = data.sample_covariance();
        let sigma = t.covariance().unwrap();
        for a in 0..5 {
            for b in 0..5 {
                // Var(x_a x_b) = σ_aa σ_bb + σ_ab² for Gaussian data
                let se = ((sigma[(a, a)] * sigma[(b, b)] + sigma[(a, b)].powi(2)) / n as f64).sqrt();
                assert!((s[(a, b)] - sigma[(a, b)]).abs() < 3.0 * se + 1e-12, "({a},{b})");
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let t = generate_truth(&small(), &mut rng).unwrap();
            generate_data(&t, 50, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_loadings_give_uncorrelated_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = Truth {
            partition: Partition::new(vec![0, 1, 0, 1], 2).unwrap(),
            loadings: ClusterLoadings::zeros(2, 2),
            psi: Uniquenesses::constant(4, 0.5).unwrap(),
        };
        let data = generate_data(&t, 20_000, &mut rng).unwrap();
        let r = data.sample_correlation().unwrap();
        for a in 0..4 {
            for b in 0..a {
                assert!(r[(a, b)].abs() < 0.03);
            }
        }
    }

    #[test]
    fn summary_ignores_replicate_order() {
        let design = SimDesign {
            k_grid: vec![1],
            g_grid: vec![2],
            ..small()
        };
        let rep = |i: usize, ari: f64, sel: (usize, usize)| ReplicateResult {
            replicate: i,
            seed: 0,
            cells: vec![CellResult {
                k: 1,
                g: 2,
                ari,
                mse: 0.1 * ari,
                rv: 1.0 - ari,
            }],
            failures: vec![],
            selected: Some(sel),
            selection_error: None,
        };
        let a = vec![rep(0, 0.5, (1, 2)), rep(1, 0.7, (2, 2)), rep(2, 0.9, (1, 2))];
        let mut b = a.clone();
        b.reverse();
        let sa = summarize(&design, &SamplerConfig::default(), a);
        let sb = summarize(&design, &SamplerConfig::default(), b);
        assert_eq!(sa, sb);
        assert!((sa.cells[0].ari.mean - 0.7).abs() < 1e-12);
        assert!((sa.selection_rate(1, 2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn study_file_parsing() {
        let cfg = StudyConfig::from_toml_str(
            "[design]\nreplicates = 3\ng_grid = [5]\n[sampler]\nn_iter = 50\nburn_in = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.design.replicates, 3);
        assert_eq!(cfg.design.n, 500);
        assert_eq!(cfg.sampler.n_iter, 50);
        assert!(StudyConfig::from_toml_str("[design]\nreplicates = 0\n").is_err());
        assert!(StudyConfig::from_toml_str("[design]\nbogus = 1\n").is_err());
    }

    #[test]
    fn design_validation() {
        assert!(SimDesign::default().validate().is_ok());
        assert!(SimDesign {
            replicates: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SimDesign {
            g_grid: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SimDesign {
            psi_min: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SimDesign {
            g_true: 41,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
