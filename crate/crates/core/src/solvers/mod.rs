//! Window-level reconstruction: per-snapshot LS, FISTA and ADMM with an ℓ1
//! prior, and the unfolded forward pass with pluggable priors.
//!
//! Every solver works on one observation window and returns the synthesized
//! channel together with its final time-domain coefficients and a trace.

pub mod admm;
pub mod fista;
pub mod ls;
pub mod prox;
pub mod tune;
pub mod unfolded;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::channel_sim::{ChannelWindow, ObservationWindow};
use crate::denoiser::{apply_denoiser, apply_denoiser_per_slice, DenoiserWeights};
use crate::transforms::{to_doppler, to_time, DdaTensor, DictionarySet, Domain};
use crate::{Error, Result};

pub use admm::{admm_solve, AdmmParams};
pub use fista::{fista_solve, FistaParams};
pub use ls::{ls_coefficients, ls_estimate};
pub use prox::soft_threshold;
pub use unfolded::{unfolded_forward, UnfoldedParams};

/// Upper bound accepted for the dual step size.
pub const GAMMA_MAX: f64 = 1.8;

/// Where the prior acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalMode {
    /// Prior on the Doppler-domain tensor.
    Doppler3d,
    /// Prior on the time-domain tensor, whole window at once.
    Time3d,
    /// Prior on each time slice separately.
    Time2d,
}

impl TemporalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemporalMode::Doppler3d => "doppler3d",
            TemporalMode::Time3d => "time3d",
            TemporalMode::Time2d => "time2d",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            TemporalMode::Doppler3d => Domain::Doppler,
            TemporalMode::Time3d | TemporalMode::Time2d => Domain::Time,
        }
    }

    /// Maps a time-domain tensor into the prior's domain.
    pub fn to_prior(&self, x: &DdaTensor) -> Result<DdaTensor> {
        match self {
            TemporalMode::Doppler3d => to_doppler(x),
            _ => {
                x.expect_domain(Domain::Time)?;
                Ok(x.clone())
            }
        }
    }

    /// Maps a prior-domain tensor back to the time domain.
    pub fn from_prior(&self, x: &DdaTensor) -> Result<DdaTensor> {
        match self {
            TemporalMode::Doppler3d => to_time(x),
            _ => {
                x.expect_domain(Domain::Time)?;
                Ok(x.clone())
            }
        }
    }
}

impl fmt::Display for TemporalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "doppler3d" => Ok(TemporalMode::Doppler3d),
            "time3d" => Ok(TemporalMode::Time3d),
            "time2d" => Ok(TemporalMode::Time2d),
            other => Err(Error::Config(format!("unknown variant {other:?} (doppler3d|time3d|time2d)"))),
        }
    }
}

/// Prior step `Z̃ = D(X̃ + β̃)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorOperator {
    /// Soft threshold at `λ/ρ`.
    SoftThreshold { lambda: f64 },
    Denoiser(Arc<DenoiserWeights>),
    Identity,
}

impl PriorOperator {
    pub fn kind(&self) -> &'static str {
        match self {
            PriorOperator::SoftThreshold { .. } => "soft",
            PriorOperator::Denoiser(_) => "denoiser",
            PriorOperator::Identity => "identity",
        }
    }

    /// `λ` for the soft threshold, 0 otherwise.
    pub fn lambda(&self) -> f64 {
        match self {
            PriorOperator::SoftThreshold { lambda } => *lambda,
            _ => 0.0,
        }
    }

    pub fn apply(&self, u: &DdaTensor, rho: f64, mode: TemporalMode) -> Result<DdaTensor> {
        u.expect_domain(mode.domain())?;
        match self {
            PriorOperator::SoftThreshold { lambda } => {
                let thr = lambda / rho;
                Ok(DdaTensor { data: u.data.mapv(|v| soft_threshold(v, thr)), domain: u.domain })
            }
            PriorOperator::Denoiser(w) => match mode {
                TemporalMode::Time2d => apply_denoiser_per_slice(u, w),
                _ => apply_denoiser(u, w),
            },
            PriorOperator::Identity => Ok(u.clone()),
        }
    }
}

/// ADMM triple in the prior domain plus the scalars that drive it.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x_tilde: DdaTensor,
    pub z_tilde: DdaTensor,
    pub beta_tilde: DdaTensor,
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub iteration: usize,
}

impl SolverState {
    pub fn zeros(shape: (usize, usize, usize), mode: TemporalMode, rho: f64, gamma: f64, lambda: f64) -> Self {
        let z = DdaTensor::zeros(shape, mode.domain());
        SolverState { x_tilde: z.clone(), z_tilde: z.clone(), beta_tilde: z, rho, gamma, lambda, iteration: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Data misfit plus `λ‖X̃‖₁`.
    pub objective: f64,
    /// ADMM: `‖X̃ − Z̃‖/‖X̃‖`. FISTA: relative change of the iterate.
    pub primal_residual: f64,
    /// ADMM: `ρ‖Z̃ₙ − Z̃ₙ₋₁‖`. Zero for FISTA.
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub h: ChannelWindow,
    /// Final time-domain coefficients.
    pub x: DdaTensor,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
}

/// A fully specified solver.
#[derive(Debug, Clone)]
pub enum SolverConfig {
    Ls,
    Fista(FistaParams),
    Admm(AdmmParams),
    Unfolded(UnfoldedParams),
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Ls => "ls",
            SolverConfig::Fista(_) => "fista",
            SolverConfig::Admm(_) => "admm",
            SolverConfig::Unfolded(_) => "unfolded",
        }
    }

    /// Temporal mode label, `"-"` for LS.
    pub fn variant(&self) -> &'static str {
        match self {
            SolverConfig::Ls => "-",
            SolverConfig::Fista(p) => p.mode.as_str(),
            SolverConfig::Admm(p) => p.mode.as_str(),
            SolverConfig::Unfolded(p) => p.mode.as_str(),
        }
    }

    pub fn solve(&self, y: &ObservationWindow, dict: &DictionarySet) -> Result<SolverOutput> {
        match self {
            SolverConfig::Ls => {
                let x = ls_coefficients(y, dict)?;
                Ok(SolverOutput { h: ls_estimate(y, dict)?, x, trace: Vec::new(), iterations: 0, converged: true })
            }
            SolverConfig::Fista(p) => fista_solve(y, dict, p),
            SolverConfig::Admm(p) => admm_solve(y, dict, p),
            SolverConfig::Unfolded(p) => unfolded_forward(y, dict, p),
        }
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= GAMMA_MAX) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, {GAMMA_MAX}], got {gamma}")));
    }
    Ok(())
}

pub(crate) fn relative(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}
