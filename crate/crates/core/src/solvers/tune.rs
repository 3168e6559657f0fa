//! Exhaustive hyperparameter search on a development set.

use rayon::prelude::*;

use crate::channel_sim::{ChannelWindow, ObservationWindow};
use crate::eval::{linear_to_db, nmse_linear};
use crate::transforms::DictionarySet;
use crate::{Error, Result};

use super::{AdmmParams, FistaParams, SolverConfig};

/// Ground truth paired with its observation.
#[derive(Debug, Clone)]
pub struct DevSample {
    pub truth: ChannelWindow,
    pub obs: ObservationWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub gammas: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid {
            lambdas: vec![0.05, 0.08, 0.5, 0.65, 0.8, 5.0, 8.0],
            rhos: vec![0.02, 0.05, 0.2, 0.35, 0.5, 2.0, 5.0],
            gammas: vec![1.0],
            iterations: vec![160],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub iterations: usize,
    /// Linear-mean NMSE over the development set, in dB; `+∞` if any run failed.
    pub mean_nmse_db: f64,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: GridPoint,
    /// Every evaluated point, in ascending `(λ, ρ, γ, iterations)` order.
    pub points: Vec<GridPoint>,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Grid-searches λ (and ρ, γ for ADMM) and the iteration budget of `base`.
/// Ties go to the smallest λ, then the smallest ρ.
pub fn tune_hyperparams(
    dev: &[DevSample],
    dict: &DictionarySet,
    base: &SolverConfig,
    grid: &TuneGrid,
) -> Result<TuneResult> {
    if dev.is_empty() {
        return Err(Error::InvalidArgument("empty development set".into()));
    }
    if grid.lambdas.is_empty() || grid.iterations.is_empty() {
        return Err(Error::InvalidArgument("empty tuning grid".into()));
    }
    let mut iters = grid.iterations.clone();
    iters.sort_unstable();
    iters.dedup();
    let lambdas = sorted(&grid.lambdas);
    let mut candidates: Vec<(SolverConfig, GridPoint)> = Vec::new();
    match base {
        SolverConfig::Fista(p) => {
            for &lambda in &lambdas {
                for &it in &iters {
                    let cfg = SolverConfig::Fista(FistaParams { lambda, max_iter: it, ..p.clone() });
                    candidates.push((cfg, GridPoint { lambda, rho: None, gamma: None, iterations: it, mean_nmse_db: 0.0 }));
                }
            }
        }
        SolverConfig::Admm(p) => {
            if grid.rhos.is_empty() || grid.gammas.is_empty() {
                return Err(Error::InvalidArgument("empty tuning grid".into()));
            }
            for &lambda in &lambdas {
                for &rho in &sorted(&grid.rhos) {
                    for &gamma in &sorted(&grid.gammas) {
                        for &it in &iters {
                            let cfg = SolverConfig::Admm(AdmmParams { lambda, rho, gamma, max_iter: it, ..p.clone() });
                            let point =
                                GridPoint { lambda, rho: Some(rho), gamma: Some(gamma), iterations: it, mean_nmse_db: 0.0 };
                            candidates.push((cfg, point));
                        }
                    }
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!("solver {} has no tunable hyperparameters", other.name())));
        }
    }

    let points: Vec<GridPoint> = candidates
        .par_iter()
        .map(|(cfg, point)| {
            let mut total = 0.0;
            for s in dev {
                match cfg.solve(&s.obs, dict).and_then(|out| nmse_linear(&out.h, &s.truth)) {
                    Ok(v) => total += v,
                    Err(_) => return GridPoint { mean_nmse_db: f64::INFINITY, ..*point },
                }
            }
            GridPoint { mean_nmse_db: linear_to_db(total / dev.len() as f64), ..*point }
        })
        .collect();
    let mut best = points[0];
    for p in &points[1..] {
        if p.mean_nmse_db < best.mean_nmse_db {
            best = *p;
        }
    }
    Ok(TuneResult { best, points })
}
