//! Closed-form data-consistency (DC) step.
//!
//! For each snapshot the DC step minimizes
//!
//! ```text
//! ‖Y_t − f_sa X_t A_t^H‖²/(2σ_t²) + (ρ/2)‖X_t − V_t‖²
//! ```
//!
//! With `f_sa` unitary and `A_t A_t^H = I`, the normal equations
//! `X_t(α⁻¹A_t^H A_t + I) = α⁻¹G_t A_t + V_t`, `G_t = f_sa^H Y_t`, `α = ρσ_t²`,
//! are solved by a rank-`m_p` correction:
//!
//! ```text
//! X_t = V_t + (G_t − V_t A_t^H) A_t / (α + 1)
//! ```
//!
//! This is algebraically the same as `C − C A^H A/(α+1)` with
//! `C = V + α⁻¹G A`, but it does not cancel two `O(1/α)` terms when the
//! noise floor makes `α` tiny.

use ndarray::{s, Array2, Array3};
use rayon::prelude::*;

use crate::channel_sim::ObservationWindow;
use crate::transforms::{frobenius, gram_deviation, sensing_for_schedule, DdaTensor, DictionarySet, Domain};
use crate::{Error, Result, C64};

/// Default floor applied to `σ_t` when noise is disabled.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-6;

/// Penalty and per-snapshot noise levels of one DC step.
#[derive(Debug, Clone, PartialEq)]
pub struct DcParams {
    pub rho: f64,
    pub sigma: Vec<f64>,
}

impl DcParams {
    pub fn new(rho: f64, sigma: Vec<f64>) -> Result<Self> {
        let p = DcParams { rho, sigma };
        p.validate()?;
        Ok(p)
    }

    /// `σ_t` taken from the observation and floored at `noise_floor`.
    pub fn from_observation(rho: f64, y: &ObservationWindow, noise_floor: f64) -> Result<Self> {
        if !(noise_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("noise floor must be positive, got {noise_floor}")));
        }
        DcParams::new(rho, y.effective_sigma(noise_floor))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive and finite, got {}", self.rho)));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("sigma must be positive and finite, got {s}")));
        }
        Ok(())
    }
}

/// Precomputed per-snapshot quantities for repeated DC steps on one observation.
#[derive(Debug, Clone)]
pub struct DcOperator {
    a: Vec<Array2<C64>>,
    a_h: Vec<Array2<C64>>,
    g: Vec<Array2<C64>>,
    alpha: Vec<f64>,
    params: DcParams,
    shape: (usize, usize, usize),
}

impl DcOperator {
    pub fn new(y: &ObservationWindow, dict: &DictionarySet, params: &DcParams) -> Result<Self> {
        params.validate()?;
        let dev = gram_deviation(&dict.f_sa);
        if dev > 1e-10 {
            return Err(Error::Dictionary(format!("DC step requires a unitary f_sa (deviation {dev:e})")));
        }
        let t_w = dict.config.t_w;
        if params.sigma.len() != t_w {
            return Err(Error::Shape(format!("{} noise levels for {t_w} snapshots", params.sigma.len())));
        }
        let (n_rx, m_p, t_y) = y.data.dim();
        if n_rx != dict.config.n_rx() || t_y != t_w || m_p != y.schedule.m_p {
            return Err(Error::Shape(format!(
                "observation {:?} does not match n_rx={}, m_p={}, t_w={t_w}",
                y.data.dim(),
                dict.config.n_rx(),
                y.schedule.m_p
            )));
        }
        let a = sensing_for_schedule(dict, &y.schedule)?;
        let a_h = a.iter().map(|m| m.t().mapv(|v| v.conj())).collect();
        let sa_h = dict.f_sa.t().mapv(|v| v.conj());
        let g = (0..t_w).map(|t| sa_h.dot(&y.data.slice(s![.., .., t]))).collect();
        let alpha = params.sigma.iter().map(|s| params.rho * s * s).collect();
        Ok(DcOperator { a, a_h, g, alpha, params: params.clone(), shape: dict.dda_shape() })
    }

    pub fn params(&self) -> &DcParams {
        &self.params
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn sensing(&self) -> &[Array2<C64>] {
        &self.a
    }

    fn check(&self, x: &DdaTensor) -> Result<()> {
        x.expect_domain(Domain::Time)?;
        if x.data.dim() != self.shape {
            return Err(Error::Shape(format!("DDA tensor {:?} does not match {:?}", x.data.dim(), self.shape)));
        }
        Ok(())
    }

    fn per_snapshot<F>(&self, x: &Array3<C64>, f: F) -> Array3<C64>
    where
        F: Fn(usize, Array2<C64>) -> Array2<C64> + Sync,
    {
        let slices: Vec<Array2<C64>> =
            (0..self.shape.2).into_par_iter().map(|t| f(t, x.slice(s![.., .., t]).to_owned())).collect();
        let mut out = Array3::zeros(self.shape);
        for (t, m) in slices.iter().enumerate() {
            out.slice_mut(s![.., .., t]).assign(m);
        }
        out
    }

    /// DC step with quadratic-penalty center `v`.
    pub fn apply(&self, v: &DdaTensor) -> Result<DdaTensor> {
        self.check(v)?;
        let data = self.per_snapshot(&v.data, |t, vt| {
            let r = &self.g[t] - &vt.dot(&self.a_h[t]);
            let corr = r.dot(&self.a[t]);
            let scale = 1.0 / (self.alpha[t] + 1.0);
            vt + &corr.mapv(|c| c * scale)
        });
        Ok(DdaTensor { data, domain: Domain::Time })
    }

    /// DC step with zero center.
    pub fn initial(&self) -> DdaTensor {
        self.apply(&DdaTensor::zeros(self.shape, Domain::Time)).expect("zero tensor has the operator's shape")
    }

    /// Weighted data misfit `Σ_t ‖Y_t − f_sa X_t A_t^H‖²/(2σ_t²)`.
    pub fn misfit(&self, x: &DdaTensor) -> Result<f64> {
        self.check(x)?;
        let terms: Vec<f64> = (0..self.shape.2)
            .into_par_iter()
            .map(|t| {
                let xt = x.data.slice(s![.., .., t]);
                let r = &self.g[t] - &xt.dot(&self.a_h[t]);
                let s = self.params.sigma[t];
                r.iter().map(|v| v.norm_sqr()).sum::<f64>() / (2.0 * s * s)
            })
            .collect();
        Ok(terms.iter().sum())
    }

    /// Gradient of [`DcOperator::misfit`] with respect to `X` (Wirtinger, conjugate direction).
    pub fn misfit_gradient(&self, x: &DdaTensor) -> Result<DdaTensor> {
        self.check(x)?;
        let data = self.per_snapshot(&x.data, |t, xt| {
            let r = &xt.dot(&self.a_h[t]) - &self.g[t];
            let s = self.params.sigma[t];
            let w = 1.0 / (s * s);
            r.dot(&self.a[t]).mapv(|c| c * w)
        });
        Ok(DdaTensor { data, domain: Domain::Time })
    }

    /// Lipschitz constant of the misfit gradient: `max_t 1/σ_t²`.
    pub fn lipschitz(&self) -> f64 {
        self.params.sigma.iter().map(|s| 1.0 / (s * s)).fold(0.0, f64::max)
    }
}

/// One DC step `argmin_X misfit(X) + (ρ/2)‖X − V‖²`.
pub fn dc_update(v: &DdaTensor, y: &ObservationWindow, dict: &DictionarySet, params: &DcParams) -> Result<DdaTensor> {
    DcOperator::new(y, dict, params)?.apply(v)
}

/// [`dc_update`] with `V = 0`.
pub fn dc_initial(y: &ObservationWindow, dict: &DictionarySet, params: &DcParams) -> Result<DdaTensor> {
    Ok(DcOperator::new(y, dict, params)?.initial())
}

/// Relative stationarity residual of a DC output, evaluated with dense
/// products and no use of the closed form:
/// `R_t = σ_t⁻² f_sa^H(f_sa X_t A_t^H − Y_t)A_t + ρ(X_t − V_t)`,
/// returned as `sqrt(Σ_t ‖R_t‖²) / ‖X‖`. Returns 0 when both are zero.
pub fn dc_residual_check(
    x_out: &DdaTensor,
    v: &DdaTensor,
    y: &ObservationWindow,
    dict: &DictionarySet,
    params: &DcParams,
) -> Result<f64> {
    x_out.expect_domain(Domain::Time)?;
    v.expect_domain(Domain::Time)?;
    let a = sensing_for_schedule(dict, &y.schedule)?;
    let sa_h = dict.f_sa.t().mapv(|c| c.conj());
    let mut total = 0.0;
    for (t, at) in a.iter().enumerate() {
        let xt = x_out.data.slice(s![.., .., t]);
        let vt = v.data.slice(s![.., .., t]);
        let at_h = at.t().mapv(|c| c.conj());
        let fit = &dict.f_sa.dot(&xt.dot(&at_h)) - &y.data.slice(s![.., .., t]);
        let s = params.sigma[t];
        let grad = sa_h.dot(&fit).dot(at).mapv(|c| c / (s * s));
        let r = grad + (&xt - &vt).mapv(|c| c * params.rho);
        total += r.iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    let norm = frobenius(&x_out.data);
    if norm == 0.0 {
        return Ok(if total == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(total.sqrt() / norm)
}
