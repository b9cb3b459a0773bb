//! End-to-end workflows behind the CLI: fit every group of a spectra file, compare
//! two fits, and regress responses on cluster members.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{analyze_data, FitOptions};
use crate::io::config::{config_hash, RunConfig};
use crate::io::spectra::{ingest_csv, read_numeric_table, Group};
use crate::io::tables::{
    fmt_f64, fmt_opt, read_matrix_csv, read_partition_csv, render_table, write_matrix_csv, write_partition_csv,
    write_table, Provenance,
};
use crate::metrics::{cluster_regression, correlation_mse, cross_tabulate, rv_coefficient};
use crate::model::Partition;
use crate::select::ModelScore;
use crate::synth::{run_study, Stat, StudyConfig, StudyReport};

pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub version: String,
    pub group: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub chain_seed: u64,
    pub n: usize,
    pub p: usize,
    pub k_init: usize,
    pub g_init: usize,
    pub k: usize,
    pub g: usize,
    pub occupied_clusters: usize,
    pub score: ModelScore,
    pub search_rings: usize,
    pub search_fits: usize,
    pub acceptance_rate: f64,
    pub binder_loss: f64,
    pub mse_vs_sample: f64,
    pub rv_vs_sample: f64,
    /// Configuration without the output directory, so the input can be re-read.
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub group: Option<String>,
    pub dir: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub groups: Vec<ManifestEntry>,
}

#[derive(Debug)]
pub struct GroupOutcome {
    pub group: Option<String>,
    pub dir: PathBuf,
    pub result: Result<GroupSummary>,
}

#[derive(Debug)]
pub struct AnalysisReport {
    pub manifest: Manifest,
    pub outcomes: Vec<GroupOutcome>,
}

impl AnalysisReport {
    pub fn first_error(&self) -> Option<&Error> {
        self.outcomes.iter().find_map(|o| o.result.as_ref().err())
    }
}

/// Directory name of a group: its value with anything but `[A-Za-z0-9._-]` replaced.
pub fn group_dir_name(group: Option<&str>) -> String {
    match group {
        None => "all".to_string(),
        Some(g) => {
            let s: String = g
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "._-".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            format!("group-{s}")
        }
    }
}

/// Recorded configurations omit the output directory so reruns elsewhere match.
fn without_out(config: &RunConfig) -> RunConfig {
    RunConfig {
        out: PathBuf::new(),
        ..config.clone()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn analyze_group(config: &RunConfig, prov: &Provenance, group: &Group, dir: &Path) -> Result<GroupSummary> {
    let data = &group.data;
    let hyper = config.hyper.resolve(data)?;
    let analysis = analyze_data(
        data,
        config.k_max,
        config.g_max_for(data.p()),
        &hyper,
        &config.sampler,
        &config.search,
        FitOptions {
            scale: config.moment_scale,
        },
    )?;
    let best = &analysis.search.best;
    let est = &best.estimates;
    let labels = data.labels();
    let sample = data.sample_correlation()?;
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("correlation.csv"), prov, labels, &est.correlation)?;
    write_matrix_csv(&dir.join("coclustering.csv"), prov, labels, &est.coclustering)?;
    write_partition_csv(&dir.join("partition.csv"), prov, labels, &est.partition)?;
    let psi_rows: Vec<Vec<String>> = labels
        .iter()
        .zip(est.psi_mean.iter())
        .map(|(l, &v)| vec![l.clone(), fmt_f64(v)])
        .collect();
    write_table(
        &dir.join("uniquenesses.csv"),
        prov,
        &["variable", "psi_mean"],
        &psi_rows,
    )?;
    let history: Vec<Vec<String>> = analysis
        .search
        .history
        .iter()
        .map(|r| {
            let s = r.score.as_ref();
            vec![
                r.ring.to_string(),
                r.k.to_string(),
                r.g.to_string(),
                r.accepted.to_string(),
                fmt_opt(s.and_then(|s| s.bic_mcmc)),
                fmt_opt(s.and_then(|s| s.bicm)),
                fmt_opt(s.and_then(|s| s.aicm)),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_table(
        &dir.join("criteria.csv"),
        prov,
        &["ring", "k", "g", "accepted", "bic_mcmc", "bicm", "aicm", "error"],
        &history,
    )?;
    let init_rows: Vec<Vec<String>> = analysis
        .init
        .candidates
        .iter()
        .map(|c| {
            vec![
                c.k.to_string(),
                c.g.to_string(),
                c.model.code().to_string(),
                fmt_f64(c.fa_loglik),
                fmt_f64(c.collapsed_loglik),
                c.n_params.to_string(),
                fmt_f64(c.bic),
            ]
        })
        .collect();
    write_table(
        &dir.join("initialization.csv"),
        prov,
        &[
            "k",
            "g",
            "row_model",
            "fa_loglik",
            "collapsed_loglik",
            "n_params",
            "bic",
        ],
        &init_rows,
    )?;
    let trace: Vec<Vec<String>> = best
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i.to_string(), fmt_f64(l)])
        .collect();
    write_table(&dir.join("trace.csv"), prov, &["iteration", "loglik"], &trace)?;
    let summary = GroupSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        group: group.name.clone(),
        config_hash: prov.config_hash.clone(),
        seed: prov.seed,
        chain_seed: best.chain_seed,
        n: data.n(),
        p: data.p(),
        k_init: analysis.init.k,
        g_init: analysis.init.g,
        k: best.k,
        g: best.g,
        occupied_clusters: est.partition.occupied_clusters(),
        score: best.score.clone(),
        search_rings: analysis.search.rings,
        search_fits: analysis.search.fits,
        acceptance_rate: best.acceptance_rate,
        binder_loss: est.binder_loss,
        mse_vs_sample: correlation_mse(&sample, &est.correlation)?,
        rv_vs_sample: rv_coefficient(&sample, &est.correlation)?,
        config: without_out(config),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Reads the input, fits every group and writes one directory per group plus a
/// manifest. A failing group is recorded and does not stop the others.
pub fn analyze(config: &RunConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let ingested = ingest_csv(&config.input, &config.ingest_options())?;
    fs::create_dir_all(&config.out)?;
    let prov = Provenance {
        seed: config.sampler.seed,
        config_hash: config.hash(),
    };
    let outcomes: Vec<GroupOutcome> = ingested
        .groups
        .par_iter()
        .map(|group| {
            let dir = config.out.join(group_dir_name(group.name.as_deref()));
            GroupOutcome {
                group: group.name.clone(),
                result: analyze_group(config, &prov, group, &dir),
                dir,
            }
        })
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: prov.seed,
        config_hash: prov.config_hash.clone(),
        config: without_out(config),
        groups: outcomes
            .iter()
            .map(|o| ManifestEntry {
                group: o.group.clone(),
                dir: group_dir_name(o.group.as_deref()),
                error: o.result.as_ref().err().map(|e| e.to_string()),
            })
            .collect(),
    };
    write_json(&config.out.join(MANIFEST_FILE), &manifest)?;
    Ok(AnalysisReport { manifest, outcomes })
}

/// Parses a 1-based inclusive index range written `lo:hi`.
pub fn parse_range(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("range `{text}` must look like lo:hi with 1 <= lo <= hi"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub p: usize,
    pub range: Option<(usize, usize)>,
    pub ari: f64,
    pub mse: f64,
    pub rv: f64,
    /// Rows follow clusters of the first fit, columns those of the second (1-based).
    pub confusion: Vec<Vec<u64>>,
    pub row_clusters: Vec<usize>,
    pub col_clusters: Vec<usize>,
}

struct FitFiles {
    labels: Vec<String>,
    partition: Vec<usize>,
    correlation: DMatrix<f64>,
}

fn read_fit_dir(dir: &Path) -> Result<FitFiles> {
    let (labels, partition) = read_partition_csv(fs::File::open(dir.join("partition.csv"))?)?;
    let (corr_labels, correlation) = read_matrix_csv(fs::File::open(dir.join("correlation.csv"))?)?;
    if corr_labels != labels {
        return Err(Error::InvalidInput(format!(
            "{}: partition and correlation files list different variables",
            dir.display()
        )));
    }
    Ok(FitFiles {
        labels,
        partition,
        correlation,
    })
}

fn symmetric_difference(a: &[String], b: &[String]) -> Vec<String> {
    let only_a = a.iter().filter(|x| !b.contains(x));
    let only_b = b.iter().filter(|x| !a.contains(x));
    only_a.chain(only_b).cloned().collect()
}

/// Compares two fit directories, optionally on a contiguous 1-based variable range.
pub fn compare_groups(dir_a: &Path, dir_b: &Path, range: Option<(usize, usize)>) -> Result<ComparisonReport> {
    let a = read_fit_dir(dir_a)?;
    let b = read_fit_dir(dir_b)?;
    let diff = symmetric_difference(&a.labels, &b.labels);
    if !diff.is_empty() || a.labels.len() != b.labels.len() {
        return Err(Error::Usage(format!(
            "the fits cover different variables; symmetric difference: [{}]",
            diff.join(", ")
        )));
    }
    // align b to a's variable order
    let order: Vec<usize> = a
        .labels
        .iter()
        .map(|l| b.labels.iter().position(|x| x == l).unwrap())
        .collect();
    let p = a.labels.len();
    let (lo, hi) = match range {
        Some((lo, hi)) if hi > p => return Err(Error::Usage(format!("range {lo}:{hi} exceeds the {p} variables"))),
        Some(r) => r,
        None => (1, p),
    };
    let idx: Vec<usize> = (lo - 1..hi).collect();
    let b_idx: Vec<usize> = idx.iter().map(|&i| order[i]).collect();
    let ra = a.correlation.select_rows(&idx).select_columns(&idx);
    let rb = b.correlation.select_rows(&b_idx).select_columns(&b_idx);
    let pa: Vec<usize> = idx.iter().map(|&i| a.partition[i]).collect();
    let pb: Vec<usize> = b_idx.iter().map(|&i| b.partition[i]).collect();
    let (ari, confusion, rows, cols) = if idx.len() >= 2 {
        let ct = cross_tabulate(&pa, &pb)?;
        (ct.ari, ct.confusion, ct.row_labels, ct.col_labels)
    } else {
        (1.0, vec![vec![1]], vec![pa[0]], vec![pb[0]])
    };
    Ok(ComparisonReport {
        p: idx.len(),
        range,
        ari,
        mse: correlation_mse(&ra, &rb)?,
        rv: rv_coefficient(&ra, &rb)?,
        confusion,
        row_clusters: rows.iter().map(|c| c + 1).collect(),
        col_clusters: cols.iter().map(|c| c + 1).collect(),
    })
}

/// Writes `comparison.json` and `confusion.csv` into `out`.
pub fn write_comparison(out: &Path, report: &ComparisonReport, prov: &Provenance) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("comparison.json"), report)?;
    let mut header = vec!["cluster".to_string()];
    header.extend(report.col_clusters.iter().map(|c| c.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .confusion
        .iter()
        .zip(&report.row_clusters)
        .map(|(r, c)| {
            std::iter::once(c.to_string())
                .chain(r.iter().map(|v| v.to_string()))
                .collect()
        })
        .collect();
    write_table(&out.join("confusion.csv"), prov, &header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub group: Option<String>,
    pub response: String,
    /// 1-based cluster number as in `partition.csv`.
    pub cluster: usize,
    pub n_vars: usize,
    pub r_squared: Option<f64>,
    pub adj_r_squared: Option<f64>,
    pub skipped: bool,
    pub rank_deficient: bool,
}

fn group_dirs(fit: &Path) -> Result<Vec<PathBuf>> {
    if fit.join(SUMMARY_FILE).is_file() {
        return Ok(vec![fit.to_path_buf()]);
    }
    let manifest_path = fit.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Usage(format!(
            "{} holds neither {SUMMARY_FILE} nor {MANIFEST_FILE}",
            fit.display()
        )));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    Ok(manifest
        .groups
        .iter()
        .filter(|g| g.error.is_none())
        .map(|g| fit.join(&g.dir))
        .collect())
}

/// Regresses every response column on each cluster's variables, per fitted group.
pub fn regress_traits(fit: &Path, responses: &Path) -> Result<Vec<RegressionRow>> {
    let (names, table) = read_numeric_table(fs::File::open(responses)?)?;
    let mut out = Vec::new();
    for dir in group_dirs(fit)? {
        let summary: GroupSummary = serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
        let ingested = ingest_csv(&summary.config.input, &summary.config.ingest_options())?;
        if table.nrows() != ingested.n_samples {
            return Err(Error::Usage(format!(
                "responses have {} rows but the input has {} samples",
                table.nrows(),
                ingested.n_samples
            )));
        }
        let group = ingested
            .groups
            .iter()
            .find(|g| g.name == summary.group)
            .ok_or_else(|| Error::InvalidInput(format!("group {:?} no longer in the input", summary.group)))?;
        let (labels, clusters) = read_partition_csv(fs::File::open(dir.join("partition.csv"))?)?;
        if labels != group.data.labels() {
            return Err(Error::InvalidInput(format!(
                "{}: partition variables do not match the input columns",
                dir.display()
            )));
        }
        let g = clusters.iter().max().map_or(1, |m| m + 1);
        let partition = Partition::new(clusters, g)?;
        for (c, name) in names.iter().enumerate() {
            let y = DVector::from_fn(group.rows.len(), |i, _| table[(group.rows[i], c)]);
            for r in cluster_regression(&group.data, &partition, &y)? {
                out.push(RegressionRow {
                    group: summary.group.clone(),
                    response: name.clone(),
                    cluster: r.cluster + 1,
                    n_vars: r.n_vars,
                    r_squared: r.r_squared,
                    adj_r_squared: r.adj_r_squared,
                    skipped: r.skipped,
                    rank_deficient: r.rank_deficient,
                });
            }
        }
    }
    Ok(out)
}

pub fn render_regression(rows: &[RegressionRow], prov: &Provenance) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.group.clone().unwrap_or_default(),
                r.response.clone(),
                r.cluster.to_string(),
                r.n_vars.to_string(),
                fmt_opt(r.r_squared),
                fmt_opt(r.adj_r_squared),
                r.skipped.to_string(),
                r.rank_deficient.to_string(),
            ]
        })
        .collect();
    render_table(
        prov,
        &[
            "group",
            "response",
            "cluster",
            "n_vars",
            "r_squared",
            "adj_r_squared",
            "skipped",
            "rank_deficient",
        ],
        &body,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StudyManifest<'a> {
    version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a StudyConfig,
    replicates: usize,
    failed_fits: usize,
    selection_failures: usize,
}

/// Runs the replication study and writes its tables and manifest into `out`.
pub fn simulate(config: &StudyConfig, out: &Path) -> Result<StudyReport> {
    let report = run_study(&config.design, &config.sampler)?;
    write_study(config, &report, out)?;
    Ok(report)
}

pub fn write_study(config: &StudyConfig, report: &StudyReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let prov = Provenance {
        seed: config.design.seed,
        config_hash: config_hash(config),
    };
    let header = ["k", "g", "mean", "sd", "count", "failures"];
    let metric = |f: fn(&crate::synth::CellSummary) -> Stat| -> Vec<Vec<String>> {
        report
            .cells
            .iter()
            .map(|c| {
                let s = f(c);
                vec![
                    c.k.to_string(),
                    c.g.to_string(),
                    fmt_f64(s.mean),
                    fmt_f64(s.sd),
                    s.count.to_string(),
                    c.failures.to_string(),
                ]
            })
            .collect()
    };
    write_table(&out.join("ari.csv"), &prov, &header, &metric(|c| c.ari))?;
    write_table(&out.join("mse.csv"), &prov, &header, &metric(|c| c.mse))?;
    write_table(&out.join("rv.csv"), &prov, &header, &metric(|c| c.rv))?;
    let selection: Vec<Vec<String>> = report
        .selections
        .iter()
        .map(|(&(k, g), &count)| {
            vec![
                k.to_string(),
                g.to_string(),
                count.to_string(),
                fmt_f64(report.selection_rate(k, g)),
            ]
        })
        .collect();
    write_table(
        &out.join("selection.csv"),
        &prov,
        &["k", "g", "count", "proportion"],
        &selection,
    )?;
    let per_rep: Vec<Vec<String>> = report
        .replicates
        .iter()
        .flat_map(|r| {
            r.cells.iter().map(move |c| {
                vec![
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    c.k.to_string(),
                    c.g.to_string(),
                    fmt_f64(c.ari),
                    fmt_f64(c.mse),
                    fmt_f64(c.rv),
                ]
            })
        })
        .collect();
    write_table(
        &out.join("replicates.csv"),
        &prov,
        &["replicate", "seed", "k", "g", "ari", "mse", "rv"],
        &per_rep,
    )?;
    let manifest = StudyManifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: config.design.seed,
        config_hash: prov.config_hash.clone(),
        config,
        replicates: report.replicates.len(),
        failed_fits: report.cells.iter().map(|c| c.failures).sum(),
        selection_failures: report.selection_failures,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}
