//! Scaled-form ADMM with the closed-form DC step.
//!
//! One iteration, with `T`/`T⁻¹` the map into and out of the prior domain:
//!
//! ```text
//! X   = DC(T⁻¹(Z̃ − β̃))
//! X̃   = T(X)
//! Z̃'  = D(X̃ + β̃)
//! β̃'  = β̃ + γ(X̃ − Z̃')
//! ```
//!
//! With the soft-threshold prior `D` thresholds at `λ/ρ`. In the time modes
//! `T` is the identity.

use crate::channel_sim::ObservationWindow;
use crate::dc::{DcOperator, DcParams, DEFAULT_NOISE_FLOOR};
use crate::transforms::{frobenius, synthesis, DdaTensor, DictionarySet};
use crate::{Error, Result};

use super::{check_gamma, relative, PriorOperator, SolverOutput, SolverState, TemporalMode, TraceEntry};

/// Objective growth factor, relative to the first iteration, treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmParams {
    pub lambda: f64,
    pub rho: f64,
    pub gamma: f64,
    pub max_iter: usize,
    /// Stop once the primal residual drops below this; 0 runs all iterations.
    pub tol: f64,
    pub noise_floor: f64,
    pub mode: TemporalMode,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            lambda: 0.5,
            rho: 0.2,
            gamma: 1.0,
            max_iter: 160,
            tol: 1e-6,
            noise_floor: DEFAULT_NOISE_FLOOR,
            mode: TemporalMode::Doppler3d,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        check_gamma(self.gamma)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One ADMM stage. Returns the new state and the time-domain DC output.
pub(crate) fn stage(
    op: &DcOperator,
    mode: TemporalMode,
    prior: &PriorOperator,
    state: &SolverState,
) -> Result<(SolverState, DdaTensor)> {
    let diff = DdaTensor { data: &state.z_tilde.data - &state.beta_tilde.data, domain: state.z_tilde.domain };
    let x = op.apply(&mode.from_prior(&diff)?)?;
    let x_tilde = mode.to_prior(&x)?;
    let u = DdaTensor { data: &x_tilde.data + &state.beta_tilde.data, domain: x_tilde.domain };
    let z_tilde = prior.apply(&u, state.rho, mode)?;
    let gamma = state.gamma;
    let mut beta = state.beta_tilde.clone();
    ndarray::Zip::from(&mut beta.data).and(&x_tilde.data).and(&z_tilde.data).for_each(|b, &xv, &zv| {
        *b += (xv - zv) * gamma;
    });
    let next = SolverState { x_tilde, z_tilde, beta_tilde: beta, iteration: state.iteration + 1, ..state.clone() };
    Ok((next, x))
}

pub(crate) fn trace_entry(op: &DcOperator, prev: &SolverState, next: &SolverState, x: &DdaTensor) -> Result<TraceEntry> {
    let objective = op.misfit(x)? + next.lambda * next.x_tilde.l1();
    let primal = relative(frobenius(&(&next.x_tilde.data - &next.z_tilde.data)), next.x_tilde.norm());
    let dual = next.rho * frobenius(&(&next.z_tilde.data - &prev.z_tilde.data));
    Ok(TraceEntry { iteration: next.iteration, objective, primal_residual: primal, dual_residual: dual })
}

pub(crate) fn check_divergence(trace: &[TraceEntry]) -> Result<()> {
    let (Some(first), Some(last)) = (trace.first(), trace.last()) else {
        return Ok(());
    };
    let limit = DIVERGENCE_FACTOR * first.objective;
    if !last.objective.is_finite() || (first.objective > 0.0 && last.objective > limit) {
        return Err(Error::Diverged { iteration: last.iteration, objective: last.objective, limit });
    }
    Ok(())
}

/// ADMM with the soft-threshold prior.
pub fn admm_solve(y: &ObservationWindow, dict: &DictionarySet, params: &AdmmParams) -> Result<SolverOutput> {
    admm_solve_observed(y, dict, params, |_, _| {})
}

/// [`admm_solve`], calling `observe(state, x)` after every iteration with the
/// new state and that iteration's time-domain DC output.
pub fn admm_solve_observed<F>(
    y: &ObservationWindow,
    dict: &DictionarySet,
    params: &AdmmParams,
    mut observe: F,
) -> Result<SolverOutput>
where
    F: FnMut(&SolverState, &DdaTensor),
{
    params.validate()?;
    let dc = DcParams::from_observation(params.rho, y, params.noise_floor)?;
    let op = DcOperator::new(y, dict, &dc)?;
    let prior = PriorOperator::SoftThreshold { lambda: params.lambda };
    let mut state = SolverState::zeros(dict.dda_shape(), params.mode, params.rho, params.gamma, params.lambda);
    let mut trace = Vec::with_capacity(params.max_iter);
    let mut x_last = None;
    let mut converged = false;
    for _ in 0..params.max_iter {
        let (next, x) = stage(&op, params.mode, &prior, &state)?;
        let entry = trace_entry(&op, &state, &next, &x)?;
        trace.push(entry);
        check_divergence(&trace)?;
        observe(&next, &x);
        state = next;
        x_last = Some(x);
        if params.tol > 0.0 && entry.primal_residual < params.tol {
            converged = true;
            break;
        }
    }
    let x = x_last.expect("at least one iteration");
    Ok(SolverOutput { h: synthesis(&x, dict)?, x, iterations: trace.len(), trace, converged })
}
