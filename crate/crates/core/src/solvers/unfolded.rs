//! Forward pass of the unfolded network.
//!
//! ```text
//! init block   X₀ = DC(0), Z̃ = D_init(T X₀), β̃ = γ(T X₀ − Z̃)
//! stage n      the ADMM iteration with D = D_n
//! final layer  X = DC(T⁻¹(Z̃ − β̃)), Ĥ = synthesis(X)
//! ```
//!
//! The init block is the first ADMM iteration with the initialization
//! denoiser as prior, so with soft-threshold priors the init block and the
//! `n_iter` stages reproduce ADMM iterations `1..=n_iter + 1`, and the final
//! layer is the DC step of iteration `n_iter + 2`. `ρ` and `γ` are shared by all
//! stages and by the final layer.

use crate::channel_sim::ObservationWindow;
use crate::dc::{DcOperator, DcParams, DEFAULT_NOISE_FLOOR};
use crate::transforms::{synthesis, DdaTensor, DictionarySet};
use crate::{Error, Result};

use super::admm::{stage, trace_entry};
use super::{check_gamma, PriorOperator, SolverOutput, SolverState, TemporalMode};

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedParams {
    pub rho: f64,
    pub gamma: f64,
    pub noise_floor: f64,
    pub mode: TemporalMode,
    pub init_prior: PriorOperator,
    /// One prior per stage; its length is the stage count.
    pub stage_priors: Vec<PriorOperator>,
}

impl UnfoldedParams {
    /// The same prior at the init block and every one of `n_iter` stages.
    pub fn uniform(prior: PriorOperator, n_iter: usize, rho: f64, gamma: f64, mode: TemporalMode) -> Self {
        UnfoldedParams {
            rho,
            gamma,
            noise_floor: DEFAULT_NOISE_FLOOR,
            mode,
            init_prior: prior.clone(),
            stage_priors: vec![prior; n_iter],
        }
    }

    pub fn n_iter(&self) -> usize {
        self.stage_priors.len()
    }
}

/// Runs the network.
pub fn unfolded_forward(y: &ObservationWindow, dict: &DictionarySet, params: &UnfoldedParams) -> Result<SolverOutput> {
    unfolded_forward_observed(y, dict, params, |_, _| {})
}

/// [`unfolded_forward`], calling `observe(state, x)` after the init block and
/// after each stage.
pub fn unfolded_forward_observed<F>(
    y: &ObservationWindow,
    dict: &DictionarySet,
    params: &UnfoldedParams,
    mut observe: F,
) -> Result<SolverOutput>
where
    F: FnMut(&SolverState, &DdaTensor),
{
    if params.stage_priors.is_empty() {
        return Err(Error::InvalidArgument("the unfolded network needs at least one stage".into()));
    }
    check_gamma(params.gamma)?;
    let dc = DcParams::from_observation(params.rho, y, params.noise_floor)?;
    let op = DcOperator::new(y, dict, &dc)?;
    let lambda = params.stage_priors.last().map(PriorOperator::lambda).unwrap_or(0.0);
    let mut state = SolverState::zeros(dict.dda_shape(), params.mode, params.rho, params.gamma, lambda);
    let mut trace = Vec::with_capacity(params.n_iter() + 1);
    for prior in std::iter::once(&params.init_prior).chain(&params.stage_priors) {
        let lambda = prior.lambda();
        let prev = SolverState { lambda, ..state };
        let (next, x) = stage(&op, params.mode, prior, &prev)?;
        trace.push(trace_entry(&op, &prev, &next, &x)?);
        observe(&next, &x);
        state = next;
    }
    let diff = DdaTensor { data: &state.z_tilde.data - &state.beta_tilde.data, domain: state.z_tilde.domain };
    let x = op.apply(&params.mode.from_prior(&diff)?)?;
    Ok(SolverOutput { h: synthesis(&x, dict)?, x, iterations: params.n_iter(), trace, converged: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{observe, sample_paths, synthesize_window, Scenario, SystemConfig};
    use crate::denoiser::{random_weights, DenoiserSpec, TimePadding};
    use crate::pilots::{mcr_schedule, BlockLayout};
    use crate::solvers::admm::{admm_solve_observed, AdmmParams};
    use crate::transforms::{build_dictionaries, frobenius, Domain};
    use crate::verify::dense_dc_oracle;
    use std::sync::Arc;

    fn setup(k_fd: usize, snr: f64) -> (DictionarySet, ObservationWindow) {
        let cfg = SystemConfig::small();
        let dict = build_dictionaries(&cfg, 1, k_fd).unwrap();
        let h = synthesize_window(&sample_paths(9, 3, &Scenario::default(), &cfg).unwrap(), &cfg).unwrap();
        let sched = mcr_schedule(&BlockLayout::new(cfg.n_f, 8).unwrap(), cfg.t_w, 3).unwrap();
        (dict, observe(&h, &sched, snr, 1).unwrap())
    }

    fn max_diff(a: &DdaTensor, b: &DdaTensor) -> f64 {
        (&a.data - &b.data).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn soft_prior_matches_admm_iterates() {
        for mode in [TemporalMode::Doppler3d, TemporalMode::Time3d] {
            let (dict, y) = setup(2, 15.0);
            let (lambda, rho, gamma, n) = (0.08, 0.35, 1.0, 6);
            let admm_p = AdmmParams { lambda, rho, gamma, max_iter: n + 2, tol: 0.0, mode, ..AdmmParams::default() };
            let mut admm_states = Vec::new();
            let admm = admm_solve_observed(&y, &dict, &admm_p, |s, _| admm_states.push(s.clone())).unwrap();
            let up = UnfoldedParams::uniform(PriorOperator::SoftThreshold { lambda }, n, rho, gamma, mode);
            let mut states = Vec::new();
            let out = unfolded_forward_observed(&y, &dict, &up, |s, _| states.push(s.clone())).unwrap();
            assert_eq!(states.len(), n + 1);
            for (a, b) in states.iter().zip(&admm_states) {
                assert!(max_diff(&a.x_tilde, &b.x_tilde) <= 1e-10);
                assert!(max_diff(&a.z_tilde, &b.z_tilde) <= 1e-10);
                assert!(max_diff(&a.beta_tilde, &b.beta_tilde) <= 1e-10);
            }
            assert!(max_diff(&out.x, &admm.x) <= 1e-10);
        }
    }

    #[test]
    fn identity_prior_single_stage_is_triple_dc() {
        let (dict, y) = setup(2, 20.0);
        let up = UnfoldedParams::uniform(PriorOperator::Identity, 1, 0.5, 1.0, TemporalMode::Doppler3d);
        let out = unfolded_forward(&y, &dict, &up).unwrap();
        let dc = DcParams::from_observation(0.5, &y, up.noise_floor).unwrap();
        let mut x = DdaTensor::zeros(dict.dda_shape(), Domain::Time);
        for _ in 0..3 {
            x = dense_dc_oracle(&x, &y, &dict, &dc).unwrap();
        }
        assert!(frobenius(&(&out.x.data - &x.data)) < 1e-10 * x.norm());
    }

    #[test]
    fn zero_conv2_denoiser_equals_identity_prior() {
        let (dict, y) = setup(1, 20.0);
        for (mode, padding, kt) in [
            (TemporalMode::Doppler3d, TimePadding::Circular, 3),
            (TemporalMode::Time3d, TimePadding::Zero, 3),
            (TemporalMode::Time2d, TimePadding::Zero, 1),
        ] {
            let spec = DenoiserSpec { hidden: 4, kernel: (3, 5, kt), padding, ..DenoiserSpec::default() };
            let w = Arc::new(random_weights(3, &spec).unwrap().zero_conv2());
            let a = unfolded_forward(&y, &dict, &UnfoldedParams::uniform(PriorOperator::Denoiser(w), 3, 0.5, 1.0, mode)).unwrap();
            let b = unfolded_forward(&y, &dict, &UnfoldedParams::uniform(PriorOperator::Identity, 3, 0.5, 1.0, mode)).unwrap();
            assert_eq!(a.h.data, b.h.data, "{mode}");
        }
    }

    #[test]
    fn random_denoiser_runs_and_is_finite() {
        let (dict, y) = setup(1, 10.0);
        let spec = DenoiserSpec { hidden: 4, ..DenoiserSpec::for_domain(Domain::Doppler) };
        let w = Arc::new(random_weights(5, &spec).unwrap());
        let up = UnfoldedParams::uniform(PriorOperator::Denoiser(w), 2, 0.5, 1.0, TemporalMode::Doppler3d);
        let out = unfolded_forward(&y, &dict, &up).unwrap();
        assert!(out.h.data.iter().all(|v| v.is_finite()));
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn rejects_empty_and_bad_gamma() {
        let (dict, y) = setup(1, 10.0);
        let mut up = UnfoldedParams::uniform(PriorOperator::Identity, 0, 0.5, 1.0, TemporalMode::Time3d);
        assert!(unfolded_forward(&y, &dict, &up).is_err());
        up.stage_priors.push(PriorOperator::Identity);
        up.gamma = 0.0;
        assert!(unfolded_forward(&y, &dict, &up).is_err());
    }
}
