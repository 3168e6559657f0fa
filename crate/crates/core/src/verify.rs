//! Dense reference computations and the self-verification suite.
//!
//! [`run_verify`] checks the dictionary and sensing identities, the exact
//! round trip, the closed-form DC step against a dense solve, ADMM against
//! the unfolded pass, the denoiser identity and equivariance, and Doppler
//! aliasing. Each check reports the measured deviation and its tolerance.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel_sim::{
    doppler_nyquist, max_unaliased_speed, observe, sample_paths, synthesize_window, ChannelWindow, ObservationWindow,
    Scenario, SystemConfig,
};
use crate::dc::{dc_residual_check, dc_update, DcParams, DEFAULT_NOISE_FLOOR};
use crate::denoiser::{apply_denoiser, random_weights, DenoiserSpec};
use crate::pilots::{enumerate_offsets, schedule, BlockLayout, PilotKind};
use crate::rng::{self, derive_seed, Purpose};
use crate::solvers::admm::admm_solve_observed;
use crate::solvers::unfolded::unfolded_forward_observed;
use crate::solvers::{AdmmParams, PriorOperator, TemporalMode, UnfoldedParams};
use crate::transforms::{
    analysis, analysis_dense, build_dictionaries, frobenius, gram_deviation, row_gram_deviation, sensing_for_schedule,
    synthesis, DdaTensor, DictionarySet, Domain,
};
use crate::{Error, Result, C64};

/// Solves the DC normal equations `X_t(α⁻¹A_t^H A_t + I) = α⁻¹ f_sa^H Y_t A_t + V_t`
/// by dense LU, forming the full `n_τ × n_τ` system. Only for small instances.
pub fn dense_dc_oracle(v: &DdaTensor, y: &ObservationWindow, dict: &DictionarySet, params: &DcParams) -> Result<DdaTensor> {
    v.expect_domain(Domain::Time)?;
    params.validate()?;
    let a = sensing_for_schedule(dict, &y.schedule)?;
    let n_rx = dict.config.n_rx();
    let (n_theta, n_tau, t_w) = dict.dda_shape();
    let f_sa = DMatrix::from_fn(n_rx, n_theta, |i, j| dict.f_sa[[i, j]]);
    let mut out = DdaTensor::zeros(dict.dda_shape(), Domain::Time);
    for t in 0..t_w {
        let at = &a[t];
        let m = at.nrows();
        let a_mat = DMatrix::from_fn(m, n_tau, |i, j| at[[i, j]]);
        let yt = DMatrix::from_fn(n_rx, m, |i, j| y.data[[i, j, t]]);
        let vt = DMatrix::from_fn(n_theta, n_tau, |i, j| v.data[[i, j, t]]);
        let alpha = params.rho * params.sigma[t] * params.sigma[t];
        let inv_alpha = C64::new(1.0 / alpha, 0.0);
        let lhs = a_mat.adjoint() * &a_mat * inv_alpha + DMatrix::<C64>::identity(n_tau, n_tau);
        let rhs = f_sa.adjoint() * yt * &a_mat * inv_alpha + vt;
        // X L = R  ⇔  L^T X^T = R^T
        let xt = lhs
            .transpose()
            .lu()
            .solve(&rhs.transpose())
            .ok_or_else(|| Error::NonFinite("singular DC normal equations".into()))?
            .transpose();
        for i in 0..n_theta {
            for j in 0..n_tau {
                out.data[[i, j, t]] = xt[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Outcome of one self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &'static str, measured: f64, tolerance: f64, detail: String) -> Self {
        CheckResult { name, measured, tolerance, passed: measured.is_finite() && measured < tolerance, detail }
    }

    fn exact(name: &'static str, measured: f64, detail: String) -> Self {
        CheckResult { name, measured, tolerance: 0.0, passed: measured == 0.0, detail }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub elapsed_s: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let tol = if c.tolerance == 0.0 { "exact".to_string() } else { format!("{:.0e}", c.tolerance) };
            writeln!(
                f,
                "{}  {:width$}  measured {:.3e}  tol {tol:5}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.detail
            )?;
        }
        let n_fail = self.failed().len();
        write!(f, "{} of {} checks passed in {:.2} s", self.checks.len() - n_fail, self.checks.len(), self.elapsed_s)
    }
}

/// Deliberate defects for exercising the report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Multiply the delay dictionary by this factor.
    FdScale(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Geometry of the full-size checks.
    pub system: SystemConfig,
    /// Block size of the full-size pilot patterns.
    pub m_p: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { system: SystemConfig::default(), m_p: 24, seed: 0, fault: None }
    }
}

struct Suite<'a> {
    opts: &'a VerifyOptions,
}

impl Suite<'_> {
    fn dict(&self, cfg: &SystemConfig, k_fd: usize) -> Result<DictionarySet> {
        let d = build_dictionaries(cfg, 1, k_fd)?;
        Ok(match self.opts.fault {
            Some(Fault::FdScale(s)) => d.with_fd_scale_fault(s),
            None => d,
        })
    }

    fn random_window(&self, cfg: &SystemConfig, index: u64) -> ChannelWindow {
        let mut r = rng::stream(self.opts.seed, Purpose::Test, index);
        let data = Array3::from_shape_simple_fn(cfg.window_shape(), || {
            C64::new(r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal))
        });
        ChannelWindow { data, config: cfg.clone() }
    }

    fn small_observation(&self, cfg: &SystemConfig, m_p: usize, index: u64, snr: f64) -> Result<ObservationWindow> {
        let h = synthesize_window(&sample_paths(derive_seed(self.opts.seed, &[index]), 3, &Scenario::default(), cfg)?, cfg)?;
        let kind = if index % 2 == 0 { PilotKind::Mcr } else { PilotKind::Standard };
        let layout = BlockLayout::new(cfg.n_f, m_p)?;
        let sched = schedule(kind, &layout, cfg.t_w, index as usize % layout.k)?;
        observe(&h, &sched, snr, index)
    }

    fn dictionaries(&self) -> Result<Vec<CheckResult>> {
        let cfg = &self.opts.system;
        let d = self.dict(cfg, 1)?;
        let sa = CheckResult::below("f_sa unitary", gram_deviation(&d.f_sa), 1e-12, format!("n_rx={}", cfg.n_rx()));
        let mut worst: f64 = 0.0;
        let mut taus = Vec::new();
        for k_fd in 1..=3 {
            let d = self.dict(cfg, k_fd)?;
            worst = worst.max(row_gram_deviation(&d.f_fd));
            taus.push(d.n_tau.to_string());
        }
        let fd = CheckResult::below("f_fd orthonormal rows", worst, 1e-12, format!("n_tau in {{{}}}", taus.join(",")));
        Ok(vec![sa, fd])
    }

    fn sensing(&self) -> Result<CheckResult> {
        let cfg = &self.opts.system;
        let layout = BlockLayout::new(cfg.n_f, self.opts.m_p)?;
        let mut worst: f64 = 0.0;
        for k_fd in 1..=3 {
            let d = self.dict(cfg, k_fd)?;
            for kind in [PilotKind::Standard, PilotKind::Mcr] {
                for sched in enumerate_offsets(kind, &layout, cfg.t_w)? {
                    for a in sensing_for_schedule(&d, &sched)? {
                        worst = worst.max(row_gram_deviation(&a));
                    }
                }
            }
        }
        Ok(CheckResult::below(
            "sensing rows orthonormal (A A^H = I)",
            worst,
            1e-12,
            format!("{} offsets x 2 patterns, k_fd 1..3", layout.k),
        ))
    }

    fn round_trip(&self) -> Result<Vec<CheckResult>> {
        let cfg = &self.opts.system;
        let d = self.dict(cfg, 3)?;
        let mut worst: f64 = 0.0;
        let mut fft_vs_dense: f64 = 0.0;
        for i in 0..3 {
            let h = self.random_window(cfg, i);
            let x = analysis(&h, &d)?;
            let back = synthesis(&x, &d)?;
            worst = worst.max(frobenius(&(&back.data - &h.data)) / frobenius(&h.data));
            if i == 0 {
                let xd = analysis_dense(&h, &d)?;
                fft_vs_dense = frobenius(&(&xd.data - &x.data)) / x.norm();
            }
        }
        Ok(vec![
            CheckResult::below("synthesis(analysis(H)) = H", worst, 1e-12, "3 random full windows, k_fd=3".into()),
            CheckResult::below("FFT transforms match dense products", fft_vs_dense, 1e-12, "relative Frobenius".into()),
        ])
    }

    fn dc(&self) -> Result<Vec<CheckResult>> {
        let small = SystemConfig { n_v: 1, n_h: 2, n_pol: 2, n_f: 12, t_w: 3, ..SystemConfig::default() };
        let mut worst: f64 = 0.0;
        for i in 0..10u64 {
            let d = self.dict(&small, 1 + (i % 2) as usize)?;
            let y = self.small_observation(&small, 4, i, 15.0)?;
            let params = DcParams::from_observation(0.3 + 0.1 * i as f64, &y, DEFAULT_NOISE_FLOOR)?;
            let v = DdaTensor { data: self.random_window(&SystemConfig { n_f: d.n_tau, ..small.clone() }, 100 + i).data, domain: Domain::Time };
            let fast = dc_update(&v, &y, &d, &params)?;
            let dense = dense_dc_oracle(&v, &y, &d, &params)?;
            worst = worst.max(frobenius(&(&fast.data - &dense.data)) / dense.norm());
        }
        let oracle = CheckResult::below("DC update matches dense oracle", worst, 1e-8, "10 small instances".into());

        let cfg = &self.opts.system;
        let d = self.dict(cfg, 3)?;
        let h = synthesize_window(&sample_paths(self.opts.seed, 6, &Scenario::default(), cfg)?, cfg)?;
        let sched = schedule(PilotKind::Mcr, &BlockLayout::new(cfg.n_f, self.opts.m_p)?, cfg.t_w, 0)?;
        let y = observe(&h, &sched, 10.0, self.opts.seed)?;
        let params = DcParams::from_observation(0.2, &y, DEFAULT_NOISE_FLOOR)?;
        let v = DdaTensor { data: self.random_window(&SystemConfig { n_f: d.n_tau, ..cfg.clone() }, 200).data, domain: Domain::Time };
        let x = dc_update(&v, &y, &d, &params)?;
        let res = dc_residual_check(&x, &v, &y, &d, &params)?;
        let stat = CheckResult::below("DC stationarity residual", res, 1e-9, "full size, k_fd=3".into());
        Ok(vec![oracle, stat])
    }

    fn unfolding(&self) -> Result<CheckResult> {
        let cfg = SystemConfig::small();
        let d = self.dict(&cfg, 2)?;
        let y = self.small_observation(&cfg, 8, 0, 15.0)?;
        let (lambda, rho, gamma, n) = (0.05, 0.35, 1.0, 8);
        let mode = TemporalMode::Doppler3d;
        let p = AdmmParams { lambda, rho, gamma, max_iter: n + 2, tol: 0.0, mode, ..AdmmParams::default() };
        let mut admm = Vec::new();
        let a = admm_solve_observed(&y, &d, &p, |s, _| admm.push(s.clone()))?;
        let up = UnfoldedParams::uniform(PriorOperator::SoftThreshold { lambda }, n, rho, gamma, mode);
        let mut unf = Vec::new();
        let u = unfolded_forward_observed(&y, &d, &up, |s, _| unf.push(s.clone()))?;
        let diff = |x: &DdaTensor, z: &DdaTensor| (&x.data - &z.data).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut worst = diff(&a.x, &u.x);
        for (s, t) in unf.iter().zip(&admm) {
            worst = worst.max(diff(&s.x_tilde, &t.x_tilde)).max(diff(&s.z_tilde, &t.z_tilde)).max(diff(&s.beta_tilde, &t.beta_tilde));
        }
        Ok(CheckResult::below("ADMM iterates equal unfolded stages", worst, 1e-10, format!("n_iter={n}, max elementwise")))
    }

    fn denoiser(&self) -> Result<Vec<CheckResult>> {
        let spec = DenoiserSpec { hidden: 4, kernel: (3, 5, 3), ..DenoiserSpec::for_domain(Domain::Doppler) };
        let w = random_weights(self.opts.seed, &spec)?;
        let cfg = SystemConfig::small();
        let u = DdaTensor { data: self.random_window(&cfg, 300).data, domain: Domain::Doppler };
        let id = apply_denoiser(&u, &w.clone().zero_conv2())?;
        let id_err = (&id.data - &u.data).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let rolled = DdaTensor { data: roll_time(&u.data, 3), domain: Domain::Doppler };
        let a = roll_time(&apply_denoiser(&u, &w)?.data, 3);
        let b = apply_denoiser(&rolled, &w)?.data;
        let eq = (&a - &b).iter().map(|v| v.norm()).fold(0.0, f64::max);
        Ok(vec![
            CheckResult::exact("denoiser zero-conv2 is identity", id_err, "max elementwise".into()),
            CheckResult::below("denoiser circular shift equivariance", eq, 1e-6, "shift 3 along Doppler".into()),
        ])
    }

    fn aliasing(&self) -> Result<Vec<CheckResult>> {
        let cfg = self.opts.system.clone();
        let mut paths = sample_paths(self.opts.seed, 3, &Scenario::default(), &cfg)?;
        let a = synthesize_window(&paths, &cfg)?;
        for p in &mut paths.paths {
            p.doppler += 1.0 / cfg.delta_t;
        }
        let b = synthesize_window(&paths, &cfg)?;
        let mismatched = a.data.iter().zip(b.data.iter()).filter(|(x, y)| x != y).count();
        let nyq = doppler_nyquist(cfg.delta_t);
        Ok(vec![
            CheckResult::exact("Doppler alias gives identical window", mismatched as f64, "entries differing".into()),
            CheckResult::below(
                "unambiguous Doppler range",
                (nyq * 2.0 * cfg.delta_t - 1.0).abs(),
                1e-12,
                format!("+-{nyq} Hz, {:.3} km/h", max_unaliased_speed(cfg.delta_t, cfg.carrier_freq) * 3.6),
            ),
        ])
    }
}

fn roll_time(x: &Array3<C64>, shift: usize) -> Array3<C64> {
    let t_w = x.dim().2;
    Array3::from_shape_fn(x.dim(), |(a, d, t)| x[[a, d, (t + t_w - shift % t_w) % t_w]])
}

/// Runs every self-check and collects the results. Checks that cannot run
/// are reported as failed with the error as detail.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let start = Instant::now();
    let suite = Suite { opts };
    let mut checks = Vec::new();
    let mut push = |name: &'static str, r: Result<Vec<CheckResult>>| match r {
        Ok(v) => checks.extend(v),
        Err(e) => checks.push(CheckResult { name, measured: f64::NAN, tolerance: 0.0, passed: false, detail: e.to_string() }),
    };
    push("dictionaries", suite.dictionaries());
    push("sensing rows orthonormal (A A^H = I)", suite.sensing().map(|c| vec![c]));
    push("round trip", suite.round_trip());
    push("data consistency", suite.dc());
    push("ADMM iterates equal unfolded stages", suite.unfolding().map(|c| vec![c]));
    push("denoiser", suite.denoiser());
    push("Doppler aliasing", suite.aliasing());
    VerifyReport { checks, elapsed_s: start.elapsed().as_secs_f64() }
}
