//! Accelerated proximal gradient on the prior-domain coefficients.
//!
//! Minimizes `misfit(T⁻¹X̃) + λ‖X̃‖₁` with step `1/L`, `L = max_t σ_t⁻²`.
//! When an accelerated step would raise the objective, the iteration falls back
//! to a plain proximal-gradient step from the previous iterate and resets the
//! momentum, so the objective never increases.

use crate::channel_sim::ObservationWindow;
use crate::dc::{DcOperator, DcParams, DEFAULT_NOISE_FLOOR};
use crate::transforms::{frobenius, synthesis, DdaTensor, DictionarySet};
use crate::{Error, Result};

use super::admm::check_divergence;
use super::{relative, soft_threshold, SolverOutput, TemporalMode, TraceEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct FistaParams {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the relative change of the iterate drops below this; 0 runs all iterations.
    pub tol: f64,
    pub noise_floor: f64,
    pub mode: TemporalMode,
}

impl Default for FistaParams {
    fn default() -> Self {
        FistaParams { lambda: 0.5, max_iter: 160, tol: 1e-6, noise_floor: DEFAULT_NOISE_FLOOR, mode: TemporalMode::Doppler3d }
    }
}

struct Problem<'a> {
    op: &'a DcOperator,
    mode: TemporalMode,
    lambda: f64,
    step: f64,
}

impl Problem<'_> {
    fn objective(&self, x: &DdaTensor) -> Result<f64> {
        Ok(self.op.misfit(&self.mode.from_prior(x)?)? + self.lambda * x.l1())
    }

    fn prox_grad(&self, x: &DdaTensor) -> Result<DdaTensor> {
        let g = self.mode.to_prior(&self.op.misfit_gradient(&self.mode.from_prior(x)?)?)?;
        let thr = self.lambda * self.step;
        let step = self.step;
        let mut out = x.clone();
        ndarray::Zip::from(&mut out.data).and(&g.data).for_each(|o, &gv| *o = soft_threshold(*o - gv * step, thr));
        Ok(out)
    }
}

/// FISTA with the ℓ1 prior, started from zero.
pub fn fista_solve(y: &ObservationWindow, dict: &DictionarySet, params: &FistaParams) -> Result<SolverOutput> {
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", params.lambda)));
    }
    if params.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(params.tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be non-negative, got {}", params.tol)));
    }
    // ρ only enters the unused DC step; any positive value works
    let dc = DcParams::from_observation(1.0, y, params.noise_floor)?;
    let op = DcOperator::new(y, dict, &dc)?;
    let pb = Problem { op: &op, mode: params.mode, lambda: params.lambda, step: 1.0 / op.lipschitz() };

    let mut x = DdaTensor::zeros(dict.dda_shape(), params.mode.domain());
    let mut f_x = pb.objective(&x)?;
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::with_capacity(params.max_iter);
    let mut converged = false;
    for it in 1..=params.max_iter {
        let mut next = pb.prox_grad(&yk)?;
        let mut f_next = pb.objective(&next)?;
        let restarted = f_next > f_x;
        if restarted {
            next = pb.prox_grad(&x)?;
            f_next = pb.objective(&next)?;
            t = 1.0;
        }
        let change = relative(frobenius(&(&next.data - &x.data)), next.norm());
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = if restarted { 0.0 } else { (t - 1.0) / t_next };
        yk = next.clone();
        ndarray::Zip::from(&mut yk.data).and(&next.data).and(&x.data).for_each(|yv, &n, &o| *yv = n + (n - o) * momentum);
        t = if restarted { 1.0 } else { t_next };
        x = next;
        f_x = f_next;
        trace.push(TraceEntry { iteration: it, objective: f_x, primal_residual: change, dual_residual: 0.0 });
        check_divergence(&trace)?;
        if params.tol > 0.0 && change < params.tol {
            converged = true;
            break;
        }
    }
    let x_time = params.mode.from_prior(&x)?;
    Ok(SolverOutput { h: synthesis(&x_time, dict)?, x: x_time, iterations: trace.len(), trace, converged })
}
