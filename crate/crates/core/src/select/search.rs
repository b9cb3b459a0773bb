//! Greedy neighborhood search over `(K, G)` driven by BIC-MCMC.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::criteria::ModelScore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Maximum number of neighbor rings; zero fits only the starting point.
    pub budget: usize,
    /// Also try `(K±1, G)` and `(K, G±1)`.
    pub axis_neighbors: bool,
    /// Largest admissible `K` and `G`.
    pub k_limit: Option<usize>,
    pub g_limit: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: 10,
            axis_neighbors: false,
            k_limit: None,
            g_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchRecord {
    pub ring: usize,
    pub k: usize,
    pub g: usize,
    pub score: Option<ModelScore>,
    pub error: Option<String>,
    /// Whether this configuration became the incumbent.
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<F> {
    pub best: F,
    pub best_score: ModelScore,
    pub history: Vec<SearchRecord>,
    pub rings: usize,
    pub fits: usize,
}

fn clamp(v: isize, limit: Option<usize>) -> usize {
    (v.max(1) as usize).min(limit.unwrap_or(usize::MAX).max(1))
}

/// Neighbors of `(k, g)` in evaluation order, clamped to `[1, limit]`.
pub fn neighbors(k: usize, g: usize, opts: &SearchOptions) -> Vec<(usize, usize)> {
    let (k, g) = (k as isize, g as isize);
    let mut steps = vec![(1, 1), (1, -1), (-1, 1), (-1, -1)];
    if opts.axis_neighbors {
        steps.extend([(1, 0), (-1, 0), (0, 1), (0, -1)]);
    }
    let mut out = Vec::new();
    for (dk, dg) in steps {
        let cand = (clamp(k + dk, opts.k_limit), clamp(g + dg, opts.g_limit));
        if !out.contains(&cand) {
            out.push(cand);
        }
    }
    out
}

fn criterion(score: &ModelScore) -> f64 {
    score.bic_mcmc.unwrap_or(f64::NEG_INFINITY)
}

/// Runs the search with an arbitrary fitting function. Each configuration is fitted
/// at most once; neighbors within a ring are fitted in parallel.
pub fn greedy_search_with<F, Fit>(k0: usize, g0: usize, opts: &SearchOptions, fit: Fit) -> Result<SearchOutcome<F>>
where
    F: Send,
    Fit: Fn(usize, usize) -> Result<(F, ModelScore)> + Sync,
{
    if k0 == 0 || g0 == 0 {
        return Err(Error::Usage("search must start at K, G >= 1".into()));
    }
    let mut visited = HashSet::new();
    visited.insert((k0, g0));
    let (mut best, mut best_score) = fit(k0, g0)?;
    let mut fits = 1;
    let mut history = vec![SearchRecord {
        ring: 0,
        k: k0,
        g: g0,
        score: Some(best_score.clone()),
        error: None,
        accepted: true,
    }];
    let mut rings = 0;
    while rings < opts.budget {
        let ring: Vec<(usize, usize)> = neighbors(best_score.k, best_score.g, opts)
            .into_iter()
            .filter(|c| visited.insert(*c))
            .collect();
        if ring.is_empty() {
            break;
        }
        rings += 1;
        fits += ring.len();
        let results: Vec<Result<(F, ModelScore)>> = ring.par_iter().map(|&(k, g)| fit(k, g)).collect();
        let mut winner: Option<(usize, F, ModelScore)> = None;
        for (&(k, g), res) in ring.iter().zip(results) {
            let idx = history.len();
            match res {
                Ok((f, s)) => {
                    history.push(SearchRecord {
                        ring: rings,
                        k,
                        g,
                        score: Some(s.clone()),
                        error: None,
                        accepted: false,
                    });
                    let beats = winner.as_ref().is_none_or(|(_, _, w)| criterion(&s) > criterion(w));
                    if beats {
                        winner = Some((idx, f, s));
                    }
                }
                Err(e) => history.push(SearchRecord {
                    ring: rings,
                    k,
                    g,
                    score: None,
                    error: Some(e.to_string()),
                    accepted: false,
                }),
            }
        }
        match winner {
            Some((idx, f, s)) if criterion(&s) > criterion(&best_score) => {
                history[idx].accepted = true;
                best = f;
                best_score = s;
            }
            _ => break,
        }
    }
    Ok(SearchOutcome {
        best,
        best_score,
        history,
        rings,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn score(k: usize, g: usize, v: f64) -> ModelScore {
        ModelScore {
            k,
            g,
            bic: None,
            bicm: None,
            aicm: None,
            bic_mcmc: Some(v),
        }
    }

    #[test]
    fn flat_landscape_stops_after_one_ring() {
        let calls = AtomicUsize::new(0);
        let out = greedy_search_with(3, 3, &SearchOptions::default(), |k, g| {
            calls.fetch_add(1, Ordering::SeqCst);
            let v = if (k, g) == (3, 3) { 0.0 } else { -1.0 };
            Ok(((k, g), score(k, g, v)))
        })
        .unwrap();
        assert_eq!(out.best, (3, 3));
        assert_eq!(out.rings, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn climbs_to_the_peak_without_refits() {
        let calls = AtomicUsize::new(0);
        let seen = std::sync::Mutex::new(HashSet::new());
        let peak = (6isize, 8isize);
        let out = greedy_search_with(
            2,
            2,
            &SearchOptions {
                axis_neighbors: true,
                ..Default::default()
            },
            |k, g| {
                calls.fetch_add(1, Ordering::SeqCst);
                assert!(seen.lock().unwrap().insert((k, g)), "refit of ({k},{g})");
                let v = -((k as isize - peak.0).pow(2) + (g as isize - peak.1).pow(2)) as f64;
                Ok(((k, g), score(k, g, v)))
            },
        )
        .unwrap();
        assert_eq!(out.best, (6, 8));
        assert_eq!(out.fits, calls.load(Ordering::SeqCst));
        let accepted: Vec<f64> = out
            .history
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.score.as_ref().unwrap().bic_mcmc.unwrap())
            .collect();
        assert!(accepted.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_budget_fits_only_the_start() {
        let out = greedy_search_with(
            2,
            4,
            &SearchOptions {
                budget: 0,
                ..Default::default()
            },
            |k, g| Ok(((), score(k, g, 1.0))),
        )
        .unwrap();
        assert_eq!(out.fits, 1);
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn neighbors_are_clamped_and_unique() {
        let n = neighbors(1, 1, &SearchOptions::default());
        assert_eq!(n, vec![(2, 2), (2, 1), (1, 2), (1, 1)]);
        let n = neighbors(
            3,
            5,
            &SearchOptions {
                k_limit: Some(3),
                g_limit: Some(5),
                ..Default::default()
            },
        );
        assert!(n.iter().all(|&(k, g)| k <= 3 && g <= 5));
    }

    #[test]
    fn failed_neighbors_are_recorded() {
        let out = greedy_search_with(2, 2, &SearchOptions::default(), |k, g| {
            if k == 3 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(((k, g), score(k, g, -(k as f64))))
            }
        })
        .unwrap();
        assert_eq!(out.best.0, 1);
        assert!(out.history.iter().any(|r| r.error.is_some()));
    }
}
