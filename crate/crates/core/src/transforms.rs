//! Dictionaries and the maps between the TFS, time-delay-angle and DDA domains.
//!
//! Sign convention: analysis-direction DFTs use `e^{-j2π·index·freq}`.
//!
//! - `f_sa = I_pol ⊗ (F_h ⊗ F_v)` with unitary DFT factors `F[m,k] = e^{-j2πmk/N}/√N`.
//! - `f_fd = S_f W^H / √n_τ`, i.e. `f_fd[f,n] = e^{+j2πfn/n_τ}/√n_τ`, the first
//!   `n_f` rows of the scaled inverse `n_τ`-point DFT. Its rows are orthonormal
//!   for every oversampling factor; the `1/√n_τ` factor is what makes the
//!   per-snapshot sensing matrices row-orthonormal, so it must not be
//!   renormalized.
//! - Analysis `X_t = f_sa^H H_t f_fd`, synthesis `H_t = f_sa X_t f_fd^H`.
//! - Doppler map: unitary `t_w`-point DFT along the window axis.
//!
//! Delay-axis products are evaluated with zero-padded FFTs; the dense
//! `f_fd` is kept for sensing matrices and for cross-checking.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rustfft::{Fft, FftPlanner};

use crate::channel_sim::{rx_index, ChannelWindow, SystemConfig};
use crate::pilots::PilotSchedule;
use crate::{Error, Result, C64};

/// Which representation the third axis of a [`DdaTensor`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Time,
    Doppler,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Time => "time",
            Domain::Doppler => "doppler",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Angle × delay × (time | Doppler) coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DdaTensor {
    pub data: Array3<C64>,
    pub domain: Domain,
}

impl DdaTensor {
    pub fn zeros(shape: (usize, usize, usize), domain: Domain) -> Self {
        DdaTensor { data: Array3::zeros(shape), domain }
    }

    pub fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::Domain { expected: expected.as_str(), found: self.domain.as_str() });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        frobenius(&self.data)
    }

    /// ℓ1 norm of complex magnitudes.
    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).sum()
    }
}

pub(crate) fn frobenius(a: &Array3<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Space-angle and delay dictionaries for one system geometry.
#[derive(Clone)]
pub struct DictionarySet {
    /// `[n_rx × n_θ]`, unitary.
    pub f_sa: Array2<C64>,
    /// `[n_f × n_τ]`, orthonormal rows.
    pub f_fd: Array2<C64>,
    pub k_sa: usize,
    pub k_fd: usize,
    pub n_theta: usize,
    pub n_tau: usize,
    pub config: SystemConfig,
    fd_scale: f64,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DictionarySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DictionarySet")
            .field("k_sa", &self.k_sa)
            .field("k_fd", &self.k_fd)
            .field("n_theta", &self.n_theta)
            .field("n_tau", &self.n_tau)
            .finish_non_exhaustive()
    }
}

fn unitary_dft(n: usize) -> Array2<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    Array2::from_shape_fn((n, n), |(m, k)| C64::from_polar(scale, -2.0 * PI * ((m * k) % n) as f64 / n as f64))
}

/// Largest entry of `|M^H M − I|`.
pub fn gram_deviation(m: &Array2<C64>) -> f64 {
    let g = m.t().mapv(|v| v.conj()).dot(m);
    max_identity_deviation(&g)
}

/// Largest entry of `|M M^H − I|`.
pub fn row_gram_deviation(m: &Array2<C64>) -> f64 {
    let g = m.dot(&m.t().mapv(|v| v.conj()));
    max_identity_deviation(&g)
}

fn max_identity_deviation(g: &Array2<C64>) -> f64 {
    g.indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).norm())
        .fold(0.0, f64::max)
}

/// Builds `f_sa` and `f_fd`. Only `k_sa = 1` is supported: the closed-form
/// data-consistency step needs a unitary `f_sa`, which is checked here.
pub fn build_dictionaries(cfg: &SystemConfig, k_sa: usize, k_fd: usize) -> Result<DictionarySet> {
    cfg.validate()?;
    if k_sa != 1 {
        return Err(Error::Config(format!("angular oversampling k_sa = {k_sa} is not supported (only 1)")));
    }
    if !(1..=3).contains(&k_fd) {
        return Err(Error::Config(format!("delay oversampling k_fd must be 1, 2 or 3, got {k_fd}")));
    }
    let fv = unitary_dft(cfg.n_v);
    let fh = unitary_dft(cfg.n_h);
    let n_rx = cfg.n_rx();
    let mut f_sa = Array2::<C64>::zeros((n_rx, n_rx));
    for p in 0..cfg.n_pol {
        for h in 0..cfg.n_h {
            for v in 0..cfg.n_v {
                let row = rx_index(cfg, p, h, v);
                for kh in 0..cfg.n_h {
                    for kv in 0..cfg.n_v {
                        f_sa[[row, rx_index(cfg, p, kh, kv)]] = fh[[h, kh]] * fv[[v, kv]];
                    }
                }
            }
        }
    }

    let n_tau = k_fd * cfg.n_f;
    let fd_scale = 1.0 / (n_tau as f64).sqrt();
    let f_fd = Array2::from_shape_fn((cfg.n_f, n_tau), |(f, n)| {
        C64::from_polar(fd_scale, 2.0 * PI * ((f * n) % n_tau) as f64 / n_tau as f64)
    });

    let mut planner = FftPlanner::new();
    let dict = DictionarySet {
        f_sa,
        f_fd,
        k_sa,
        k_fd,
        n_theta: n_rx,
        n_tau,
        config: cfg.clone(),
        fd_scale,
        fft_fwd: planner.plan_fft_forward(n_tau),
        fft_inv: planner.plan_fft_inverse(n_tau),
    };
    let dev = gram_deviation(&dict.f_sa);
    if dev > 1e-10 {
        return Err(Error::Dictionary(format!("space-angle dictionary is not unitary (deviation {dev:e})")));
    }
    Ok(dict)
}

impl DictionarySet {
    /// DDA tensor shape `[n_θ, n_τ, t_w]`.
    pub fn dda_shape(&self) -> (usize, usize, usize) {
        (self.n_theta, self.n_tau, self.config.t_w)
    }

    /// Scales the delay dictionary by `factor`, breaking its orthonormality.
    /// Used by the self-check fault injection only.
    #[doc(hidden)]
    pub fn with_fd_scale_fault(mut self, factor: f64) -> Self {
        self.f_fd.mapv_inplace(|v| v * factor);
        self.fd_scale *= factor;
        self
    }

    /// `M f_fd` for `M` of shape `[rows × n_f]`, via zero-padded inverse FFTs.
    pub fn delay_analysis(&self, m: ArrayView2<C64>) -> Array2<C64> {
        let (rows, n_f) = m.dim();
        assert_eq!(n_f, self.config.n_f, "delay_analysis: input has {n_f} columns");
        let mut out = Array2::<C64>::zeros((rows, self.n_tau));
        let mut buf = vec![C64::new(0.0, 0.0); self.n_tau];
        for r in 0..rows {
            buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (b, &x) in buf.iter_mut().zip(m.row(r)) {
                *b = x;
            }
            self.fft_inv.process(&mut buf);
            for (o, &b) in out.row_mut(r).iter_mut().zip(&buf) {
                *o = b * self.fd_scale;
            }
        }
        out
    }

    /// `M f_fd^H` for `M` of shape `[rows × n_τ]`, via FFTs truncated to `n_f`.
    pub fn delay_synthesis(&self, m: ArrayView2<C64>) -> Array2<C64> {
        let (rows, n_tau) = m.dim();
        assert_eq!(n_tau, self.n_tau, "delay_synthesis: input has {n_tau} columns");
        let n_f = self.config.n_f;
        let mut out = Array2::<C64>::zeros((rows, n_f));
        let mut buf = vec![C64::new(0.0, 0.0); self.n_tau];
        for r in 0..rows {
            for (b, &x) in buf.iter_mut().zip(m.row(r)) {
                *b = x;
            }
            self.fft_fwd.process(&mut buf);
            for (o, &b) in out.row_mut(r).iter_mut().zip(&buf[..n_f]) {
                *o = b * self.fd_scale;
            }
        }
        out
    }

    fn f_sa_h(&self) -> Array2<C64> {
        self.f_sa.t().mapv(|v| v.conj())
    }
}

/// Sensing matrix `A_t`: the rows of `f_fd` listed in `omega` (0-based).
pub fn sensing_matrix(dict: &DictionarySet, omega: &[usize]) -> Result<Array2<C64>> {
    let n_f = dict.config.n_f;
    if omega.is_empty() {
        return Err(Error::InvalidArgument("empty observation set".into()));
    }
    let mut seen = vec![false; n_f];
    for &f in omega {
        if f >= n_f {
            return Err(Error::InvalidArgument(format!("subcarrier {f} out of range 0..{n_f}")));
        }
        if std::mem::replace(&mut seen[f], true) {
            return Err(Error::InvalidArgument(format!("subcarrier {f} listed twice")));
        }
    }
    Ok(dict.f_fd.select(Axis(0), omega))
}

/// Sensing matrices for every snapshot of a schedule.
pub fn sensing_for_schedule(dict: &DictionarySet, schedule: &PilotSchedule) -> Result<Vec<Array2<C64>>> {
    if schedule.n_f() != dict.config.n_f || schedule.t_w != dict.config.t_w {
        return Err(Error::Shape(format!(
            "schedule is {} × {}, dictionaries expect {} × {}",
            schedule.n_f(),
            schedule.t_w,
            dict.config.n_f,
            dict.config.t_w
        )));
    }
    (0..schedule.t_w)
        .map(|t| sensing_matrix(dict, &schedule.omega(t).collect::<Vec<_>>()))
        .collect()
}

fn check_window(h: &ChannelWindow, dict: &DictionarySet) -> Result<()> {
    if h.data.dim() != dict.config.window_shape() {
        return Err(Error::Shape(format!(
            "window {:?} does not match dictionaries {:?}",
            h.data.dim(),
            dict.config.window_shape()
        )));
    }
    Ok(())
}

fn check_dda(x: &DdaTensor, dict: &DictionarySet) -> Result<()> {
    if x.data.dim() != dict.dda_shape() {
        return Err(Error::Shape(format!("DDA tensor {:?} does not match {:?}", x.data.dim(), dict.dda_shape())));
    }
    Ok(())
}

/// `X_t = f_sa^H H_t f_fd` for every snapshot.
pub fn analysis(h: &ChannelWindow, dict: &DictionarySet) -> Result<DdaTensor> {
    check_window(h, dict)?;
    let sa_h = dict.f_sa_h();
    let mut out = DdaTensor::zeros(dict.dda_shape(), Domain::Time);
    for t in 0..dict.config.t_w {
        let xt = sa_h.dot(&dict.delay_analysis(h.data.slice(s![.., .., t])));
        out.data.slice_mut(s![.., .., t]).assign(&xt);
    }
    Ok(out)
}

/// `H_t = f_sa X_t f_fd^H` for every snapshot. Doppler-domain input is rejected.
pub fn synthesis(x: &DdaTensor, dict: &DictionarySet) -> Result<ChannelWindow> {
    x.expect_domain(Domain::Time)?;
    check_dda(x, dict)?;
    let mut data = Array3::zeros(dict.config.window_shape());
    for t in 0..dict.config.t_w {
        let ht = dict.f_sa.dot(&dict.delay_synthesis(x.data.slice(s![.., .., t])));
        data.slice_mut(s![.., .., t]).assign(&ht);
    }
    Ok(ChannelWindow { data, config: dict.config.clone() })
}

/// [`analysis`] with explicit dense products (reference path).
pub fn analysis_dense(h: &ChannelWindow, dict: &DictionarySet) -> Result<DdaTensor> {
    check_window(h, dict)?;
    let sa_h = dict.f_sa_h();
    let mut out = DdaTensor::zeros(dict.dda_shape(), Domain::Time);
    for t in 0..dict.config.t_w {
        let xt = sa_h.dot(&h.data.slice(s![.., .., t])).dot(&dict.f_fd);
        out.data.slice_mut(s![.., .., t]).assign(&xt);
    }
    Ok(out)
}

/// [`synthesis`] with explicit dense products (reference path).
pub fn synthesis_dense(x: &DdaTensor, dict: &DictionarySet) -> Result<ChannelWindow> {
    x.expect_domain(Domain::Time)?;
    check_dda(x, dict)?;
    let fd_h = dict.f_fd.t().mapv(|v| v.conj());
    let mut data = Array3::zeros(dict.config.window_shape());
    for t in 0..dict.config.t_w {
        let ht = dict.f_sa.dot(&x.data.slice(s![.., .., t])).dot(&fd_h);
        data.slice_mut(s![.., .., t]).assign(&ht);
    }
    Ok(ChannelWindow { data, config: dict.config.clone() })
}

fn window_dft(x: &DdaTensor, inverse: bool) -> Array3<C64> {
    let (_, _, t_w) = x.data.dim();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(t_w) } else { planner.plan_fft_forward(t_w) };
    let scale = 1.0 / (t_w as f64).sqrt();
    let mut data = x.data.as_standard_layout().into_owned();
    let flat = data.as_slice_mut().expect("standard layout");
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for lane in flat.chunks_exact_mut(t_w) {
        fft.process_with_scratch(lane, &mut scratch);
        lane.iter_mut().for_each(|v| *v *= scale);
    }
    data
}

/// Unitary DFT along the window axis: time → Doppler.
pub fn to_doppler(x: &DdaTensor) -> Result<DdaTensor> {
    x.expect_domain(Domain::Time)?;
    Ok(DdaTensor { data: window_dft(x, false), domain: Domain::Doppler })
}

/// Inverse of [`to_doppler`].
pub fn to_time(x: &DdaTensor) -> Result<DdaTensor> {
    x.expect_domain(Domain::Doppler)?;
    Ok(DdaTensor { data: window_dft(x, true), domain: Domain::Time })
}
