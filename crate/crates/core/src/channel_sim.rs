//! Synthetic windowed channels and noisy pilot observations.
//!
//! A window holds `t_w` snapshots of the receive × subcarrier frequency
//! response. Paths are superposed as
//! `H_t = Σ β_l e^{j2π ν_l t Δt} a_l d(τ_l)^T` (snapshot index `t` starting at 0),
//! with `a_l = p_l ⊗ a_h(θ_h) ⊗ a_v(θ_v)`.
//!
//! The receive index follows that Kronecker order: polarization outermost,
//! then horizontal, then vertical (fastest). [`rx_index`] is the single
//! place that encodes it.

use std::f64::consts::PI;

use ndarray::{s, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::pilots::{apply_mask, PilotSchedule};
use crate::rng::{self, Purpose};
use crate::{Error, Result, C64};

/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Array, band and window geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Vertical antenna elements.
    pub n_v: usize,
    /// Horizontal antenna elements.
    pub n_h: usize,
    /// Polarizations.
    pub n_pol: usize,
    /// Subcarriers.
    pub n_f: usize,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    /// Snapshots per window.
    pub t_w: usize,
    /// Inter-snapshot interval (s).
    pub delta_t: f64,
    /// Carrier frequency (Hz).
    pub carrier_freq: f64,
}

impl Default for SystemConfig {
    /// 4×8 dual-polarized array, 408 subcarriers at 240 kHz, 10 snapshots
    /// 40 ms apart, 3.5 GHz carrier.
    fn default() -> Self {
        SystemConfig {
            n_v: 4,
            n_h: 8,
            n_pol: 2,
            n_f: 408,
            delta_f: 240e3,
            t_w: 10,
            delta_t: 0.040,
            carrier_freq: 3.5e9,
        }
    }
}

impl SystemConfig {
    /// Reduced geometry used by the recovery tests: 2×2 dual-polarized array
    /// (8 receive ports) and 40 subcarriers, otherwise the default timing.
    pub fn small() -> Self {
        SystemConfig { n_v: 2, n_h: 2, n_f: 40, ..SystemConfig::default() }
    }

    pub fn n_rx(&self) -> usize {
        self.n_v * self.n_h * self.n_pol
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_v == 0 || self.n_h == 0 || self.n_pol == 0 || self.n_f == 0 || self.t_w == 0 {
            return Err(Error::Config(format!("all counts must be >= 1: {self:?}")));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.delta_f) || !positive(self.delta_t) || !positive(self.carrier_freq) {
            return Err(Error::Config(format!(
                "delta_f, delta_t and carrier_freq must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Largest delay that does not alias, `1/Δf` (exclusive).
    pub fn max_delay(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Window tensor shape `[n_rx, n_f, t_w]`.
    pub fn window_shape(&self) -> (usize, usize, usize) {
        (self.n_rx(), self.n_f, self.t_w)
    }
}

/// Receive index of element `(pol, h, v)`.
#[inline]
pub fn rx_index(cfg: &SystemConfig, pol: usize, h: usize, v: usize) -> usize {
    debug_assert!(pol < cfg.n_pol && h < cfg.n_h && v < cfg.n_v);
    (pol * cfg.n_h + h) * cfg.n_v + v
}

/// Half-width of the unambiguous Doppler interval for snapshot spacing `delta_t`.
pub fn doppler_nyquist(delta_t: f64) -> f64 {
    0.5 / delta_t
}

/// Radial speed (m/s) whose Doppler shift equals the Nyquist limit.
pub fn max_unaliased_speed(delta_t: f64, carrier_freq: f64) -> f64 {
    doppler_nyquist(delta_t) * SPEED_OF_LIGHT / carrier_freq
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub gain: C64,
    /// Delay (s), in `[0, 1/Δf)`.
    pub delay: f64,
    /// Doppler shift (Hz).
    pub doppler: f64,
    /// Vertical spatial frequency (cycles/element).
    pub theta_v: f64,
    /// Horizontal spatial frequency (cycles/element).
    pub theta_h: f64,
    /// Unit-norm polarization weights, length `n_pol`.
    pub pol_weights: Vec<C64>,
}

impl Path {
    fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if !(self.delay >= 0.0 && self.delay < cfg.max_delay()) {
            return Err(Error::AliasedDelay { tau: self.delay, limit: cfg.max_delay() });
        }
        if self.pol_weights.len() != cfg.n_pol {
            return Err(Error::Shape(format!(
                "path has {} polarization weights, config has n_pol = {}",
                self.pol_weights.len(),
                cfg.n_pol
            )));
        }
        let norm: f64 = self.pol_weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "polarization weights must have unit norm, got {norm}"
            )));
        }
        let finite = self.gain.re.is_finite()
            && self.gain.im.is_finite()
            && self.doppler.is_finite()
            && self.theta_v.is_finite()
            && self.theta_h.is_finite();
        if !finite {
            return Err(Error::NonFinite("path parameters".into()));
        }
        Ok(())
    }
}

/// Paths of one window together with the seed that drew them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub seed: u64,
}

/// Time-frequency-space channel window, shape `[n_rx, n_f, t_w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWindow {
    pub data: Array3<C64>,
    pub config: SystemConfig,
}

impl ChannelWindow {
    pub fn new(data: Array3<C64>, config: SystemConfig) -> Result<Self> {
        if data.dim() != config.window_shape() {
            return Err(Error::Shape(format!(
                "window data {:?} does not match config shape {:?}",
                data.dim(),
                config.window_shape()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("channel window".into()));
        }
        Ok(ChannelWindow { data, config })
    }

    pub fn zeros(config: &SystemConfig) -> Self {
        ChannelWindow { data: Array3::zeros(config.window_shape()), config: config.clone() }
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Pilot observations of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    /// Observed columns, shape `[n_rx, m_p, t_w]`, ascending subcarrier order.
    pub data: Array3<C64>,
    /// Per-snapshot noise standard deviation (0 when noise is disabled).
    pub sigma: Vec<f64>,
    pub schedule: PilotSchedule,
    /// SNR used to draw the noise; `+∞` when noise is disabled.
    pub snr_db: f64,
}

impl ObservationWindow {
    /// Noise-free observation: the masked window with `σ_t = 0`.
    pub fn noiseless(h: &ChannelWindow, schedule: &PilotSchedule) -> Result<Self> {
        let data = apply_mask(h, schedule)?;
        Ok(ObservationWindow {
            data,
            sigma: vec![0.0; schedule.t_w],
            schedule: schedule.clone(),
            snr_db: f64::INFINITY,
        })
    }

    /// `σ_t` floored at `floor`, as used by the data-consistency weights.
    pub fn effective_sigma(&self, floor: f64) -> Vec<f64> {
        self.sigma.iter().map(|&s| s.max(floor)).collect()
    }
}

/// Unit-norm array response `(1/√n)·e^{-j2π m θ}`, `m = 0..n`.
pub fn steering_vector(theta: f64, n: usize) -> Vec<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n).map(|m| C64::from_polar(scale, -2.0 * PI * m as f64 * theta)).collect()
}

/// Frequency-domain delay response `e^{-j2π f Δf τ}`, `f = 0..n_f`.
pub fn delay_response(tau: f64, cfg: &SystemConfig) -> Result<Vec<C64>> {
    if !(tau >= 0.0 && tau < cfg.max_delay()) {
        return Err(Error::AliasedDelay { tau, limit: cfg.max_delay() });
    }
    Ok((0..cfg.n_f)
        .map(|f| C64::from_polar(1.0, -2.0 * PI * f as f64 * cfg.delta_f * tau))
        .collect())
}

const DOPPLER_PHASE_BITS: u32 = 40;

/// Per-snapshot Doppler phasors `e^{j2π ν t Δt}`, `t = 0..t_w`.
///
/// The normalized Doppler `ν Δt` is reduced modulo one cycle and quantized
/// to a 2⁻⁴⁰-cycle grid before the phase is formed, so Dopplers that differ
/// by a multiple of `1/Δt` give bit-identical phasors.
fn doppler_phasors(nu: f64, delta_t: f64, t_w: usize) -> Vec<C64> {
    let modulus = 1u64 << DOPPLER_PHASE_BITS;
    let cycles = nu * delta_t;
    let frac = cycles - cycles.floor();
    let q = ((frac * modulus as f64).round() as u64) & (modulus - 1);
    (0..t_w as u64)
        .map(|t| {
            let k = q.wrapping_mul(t) & (modulus - 1);
            C64::from_polar(1.0, 2.0 * PI * (k as f64 / modulus as f64))
        })
        .collect()
}

fn array_response(path: &Path, cfg: &SystemConfig) -> Vec<C64> {
    let av = steering_vector(path.theta_v, cfg.n_v);
    let ah = steering_vector(path.theta_h, cfg.n_h);
    let mut a = vec![C64::new(0.0, 0.0); cfg.n_rx()];
    for (p, &wp) in path.pol_weights.iter().enumerate() {
        for (h, &vh) in ah.iter().enumerate() {
            for (v, &vv) in av.iter().enumerate() {
                a[rx_index(cfg, p, h, v)] = wp * vh * vv;
            }
        }
    }
    a
}

/// Superposes the paths into a channel window.
pub fn synthesize_window(paths: &PathSet, cfg: &SystemConfig) -> Result<ChannelWindow> {
    cfg.validate()?;
    let mut data = Array3::<C64>::zeros(cfg.window_shape());
    for path in &paths.paths {
        path.validate(cfg)?;
        let a = array_response(path, cfg);
        let d = delay_response(path.delay, cfg)?;
        let ph: Vec<C64> = doppler_phasors(path.doppler, cfg.delta_t, cfg.t_w)
            .into_iter()
            .map(|p| p * path.gain)
            .collect();
        for (r, &ar) in a.iter().enumerate() {
            for (f, &df) in d.iter().enumerate() {
                let ad = ar * df;
                let mut lane = data.slice_mut(s![r, f, ..]);
                for (x, &p) in lane.iter_mut().zip(&ph) {
                    *x += ad * p;
                }
            }
        }
    }
    Ok(ChannelWindow { data, config: cfg.clone() })
}

/// Parameter ranges for [`sample_paths`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Delays are drawn from `[0, delay_frac/Δf)`.
    pub delay_frac: f64,
    /// Dopplers are drawn from `[-nu_max, nu_max]` (Hz).
    pub nu_max: f64,
    /// Power drop between consecutive paths (dB).
    pub power_decay_db: f64,
    /// Snap angles, delays and Dopplers to the dictionary grids.
    pub on_grid: bool,
    /// Delay oversampling of the grid used when `on_grid` is set.
    pub grid_k_fd: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { delay_frac: 0.1, nu_max: 13.0, power_decay_db: 3.0, on_grid: false, grid_k_fd: 1 }
    }
}

/// Draws `l` paths from `scenario` using the path stream of `seed`.
///
/// Off-grid paths get uniform angles in `[0, 1)`, uniform delays and
/// Dopplers, and random unit polarization vectors. On-grid paths use DFT
/// grid angles, delays `n/(k_fd n_f Δf)`, Dopplers `m/(t_w Δt)` and a single
/// active polarization, with distinct (polarization, angle, delay) atoms.
/// Gains have a uniform random phase and powers decaying by
/// `power_decay_db` per path, normalized to unit total power.
pub fn sample_paths(seed: u64, l: usize, scenario: &Scenario, cfg: &SystemConfig) -> Result<PathSet> {
    if l == 0 {
        return Err(Error::InvalidArgument("path count must be >= 1".into()));
    }
    cfg.validate()?;
    if !(scenario.delay_frac > 0.0 && scenario.delay_frac <= 1.0) {
        return Err(Error::Config(format!("delay_frac must be in (0, 1], got {}", scenario.delay_frac)));
    }
    if !(scenario.nu_max >= 0.0) || scenario.grid_k_fd == 0 {
        return Err(Error::Config("nu_max must be >= 0 and grid_k_fd >= 1".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Paths, 0);

    let powers: Vec<f64> = (0..l).map(|i| 10f64.powf(-scenario.power_decay_db * i as f64 / 10.0)).collect();
    let total: f64 = powers.iter().sum();

    let n_tau = scenario.grid_k_fd * cfg.n_f;
    let delay_bins = ((scenario.delay_frac * n_tau as f64).floor() as usize).max(1);
    let doppler_bins = (scenario.nu_max * cfg.t_w as f64 * cfg.delta_t).floor() as i64;
    let atoms = cfg.n_pol * cfg.n_v * cfg.n_h * delay_bins;
    if scenario.on_grid && l > atoms {
        return Err(Error::InvalidArgument(format!("{l} distinct on-grid paths requested, only {atoms} atoms")));
    }

    let mut used = Vec::new();
    let mut paths = Vec::with_capacity(l);
    for &p in &powers {
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        let gain = C64::from_polar((p / total).sqrt(), phase);
        let path = if scenario.on_grid {
            let (pol, iv, ih, n) = loop {
                let atom = (
                    rng.random_range(0..cfg.n_pol),
                    rng.random_range(0..cfg.n_v),
                    rng.random_range(0..cfg.n_h),
                    rng.random_range(0..delay_bins),
                );
                if !used.contains(&atom) {
                    used.push(atom);
                    break atom;
                }
            };
            let m = rng.random_range(-doppler_bins..=doppler_bins);
            let mut pol_weights = vec![C64::new(0.0, 0.0); cfg.n_pol];
            pol_weights[pol] = C64::new(1.0, 0.0);
            Path {
                gain,
                delay: n as f64 / (n_tau as f64 * cfg.delta_f),
                doppler: m as f64 / (cfg.t_w as f64 * cfg.delta_t),
                theta_v: iv as f64 / cfg.n_v as f64,
                theta_h: ih as f64 / cfg.n_h as f64,
                pol_weights,
            }
        } else {
            let mut pol_weights: Vec<C64> = (0..cfg.n_pol)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let norm = pol_weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            pol_weights.iter_mut().for_each(|w| *w /= norm);
            Path {
                gain,
                delay: rng.random::<f64>() * scenario.delay_frac / cfg.delta_f,
                doppler: (2.0 * rng.random::<f64>() - 1.0) * scenario.nu_max,
                theta_v: rng.random::<f64>(),
                theta_h: rng.random::<f64>(),
                pol_weights,
            }
        };
        paths.push(path);
    }
    Ok(PathSet { paths, seed })
}

/// Observes `h` through `schedule` with circular complex Gaussian noise.
///
/// Snapshot `t` gets noise variance `σ_t² = P_t / 10^(snr_db/10)`, where
/// `P_t` is the mean power of the observed entries of that snapshot.
/// `snr_db = +∞` disables noise.
pub fn observe(h: &ChannelWindow, schedule: &PilotSchedule, snr_db: f64, seed: u64) -> Result<ObservationWindow> {
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("snr_db is NaN".into()));
    }
    let mut obs = ObservationWindow::noiseless(h, schedule)?;
    if snr_db == f64::INFINITY {
        return Ok(obs);
    }
    obs.snr_db = snr_db;
    let snr_lin = 10f64.powf(snr_db / 10.0);
    let mut rng = rng::stream(seed, Purpose::Noise, 0);
    let (n_rx, m_p, t_w) = obs.data.dim();
    for t in 0..t_w {
        let mut slice = obs.data.slice_mut(s![.., .., t]);
        let power = slice.iter().map(|v| v.norm_sqr()).sum::<f64>() / (n_rx * m_p) as f64;
        let sigma = (power / snr_lin).sqrt();
        obs.sigma[t] = sigma;
        let component = sigma / 2f64.sqrt();
        for v in slice.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += C64::new(re, im) * component;
        }
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{standard_schedule, BlockLayout};

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_vector_trivial_cases() {
        let v = steering_vector(0.0, 4);
        assert!(v.iter().all(|&x| close(x, C64::new(0.5, 0.0), 1e-15)));
        let v = steering_vector(0.25, 4);
        let expect = [C64::new(0.5, 0.0), C64::new(0.0, -0.5), C64::new(-0.5, 0.0), C64::new(0.0, 0.5)];
        for (x, e) in v.iter().zip(expect) {
            assert!(close(*x, e, 1e-15), "{x} vs {e}");
        }
    }

    #[test]
    fn steering_vector_matches_dft_column() {
        // Column 1 of the unitary 8-point DFT matrix W[m,k] = e^{-j2πmk/8}/√8.
        let v = steering_vector(1.0 / 8.0, 8);
        for (m, x) in v.iter().enumerate() {
            let w = C64::from_polar(1.0 / 8f64.sqrt(), -2.0 * PI * (m as f64) / 8.0);
            assert!(close(*x, w, 1e-15));
        }
    }

    #[test]
    fn delay_response_properties() {
        let cfg = SystemConfig::default();
        let d0 = delay_response(0.0, &cfg).unwrap();
        assert!(d0.iter().all(|&x| x == C64::new(1.0, 0.0)));

        let (t0, t1) = (0.13 / cfg.delta_f, 0.41 / cfg.delta_f);
        let a = delay_response(t0, &cfg).unwrap();
        let b = delay_response(t1, &cfg).unwrap();
        let c = delay_response(t0 + t1, &cfg).unwrap();
        for i in 0..cfg.n_f {
            assert!((a[i].norm() - 1.0).abs() < 1e-14);
            assert!(close(a[i] * b[i], c[i], 1e-11));
        }

        assert!(matches!(delay_response(-1e-9, &cfg), Err(Error::AliasedDelay { .. })));
        assert!(matches!(delay_response(1.0 / cfg.delta_f, &cfg), Err(Error::AliasedDelay { .. })));
    }

    fn static_path(pol: Vec<C64>) -> Path {
        Path { gain: C64::new(1.0, 0.0), delay: 0.0, doppler: 0.0, theta_v: 0.0, theta_h: 0.0, pol_weights: pol }
    }

    #[test]
    fn static_single_ray_is_constant_in_time() {
        let cfg = SystemConfig::small();
        let ps = PathSet { paths: vec![static_path(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)])], seed: 0 };
        let h = synthesize_window(&ps, &cfg).unwrap();
        let amp = 1.0 / ((cfg.n_v * cfg.n_h) as f64).sqrt();
        for r in 0..cfg.n_rx() {
            let expect = if r < cfg.n_v * cfg.n_h { amp } else { 0.0 };
            for f in 0..cfg.n_f {
                for t in 0..cfg.t_w {
                    assert!(close(h.data[[r, f, t]], C64::new(expect, 0.0), 1e-15));
                }
            }
        }
    }

    #[test]
    fn doppler_aliases_are_bit_identical() {
        let cfg = SystemConfig::default();
        let mut path = static_path(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        path.doppler = 7.318;
        path.delay = 0.021 / cfg.delta_f;
        path.theta_v = 0.37;
        let mut aliased = path.clone();
        aliased.doppler += 1.0 / cfg.delta_t;
        let a = synthesize_window(&PathSet { paths: vec![path], seed: 0 }, &cfg).unwrap();
        let b = synthesize_window(&PathSet { paths: vec![aliased], seed: 0 }, &cfg).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        let cfg = SystemConfig::small();
        let mut p = static_path(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(synthesize_window(&PathSet { paths: vec![p.clone()], seed: 0 }, &cfg).is_err());
        p.pol_weights = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        p.delay = 2.0 / cfg.delta_f;
        assert!(matches!(
            synthesize_window(&PathSet { paths: vec![p], seed: 0 }, &cfg),
            Err(Error::AliasedDelay { .. })
        ));
    }

    #[test]
    fn sample_paths_is_deterministic_and_in_range() {
        let cfg = SystemConfig::default();
        let sc = Scenario::default();
        let a = sample_paths(1, 8, &sc, &cfg).unwrap();
        let b = sample_paths(1, 8, &sc, &cfg).unwrap();
        assert_eq!(a, b);
        for p in &a.paths {
            assert!(p.delay >= 0.0 && p.delay < sc.delay_frac / cfg.delta_f);
            assert!(p.doppler.abs() <= sc.nu_max);
            assert!((0.0..1.0).contains(&p.theta_v) && (0.0..1.0).contains(&p.theta_h));
        }
        let power: f64 = a.paths.iter().map(|p| p.gain.norm_sqr()).sum();
        assert!((power - 1.0).abs() < 1e-12);
        let c = sample_paths(2, 8, &sc, &cfg).unwrap();
        assert_ne!(a.paths, c.paths);
        assert!(sample_paths(1, 0, &sc, &cfg).is_err());
    }

    #[test]
    fn noiseless_observation_is_the_mask() {
        let cfg = SystemConfig::small();
        let ps = sample_paths(3, 4, &Scenario::default(), &cfg).unwrap();
        let h = synthesize_window(&ps, &cfg).unwrap();
        let layout = BlockLayout::new(cfg.n_f, 8).unwrap();
        let sched = standard_schedule(&layout, cfg.t_w, 2).unwrap();
        let obs = observe(&h, &sched, f64::INFINITY, 9).unwrap();
        assert_eq!(obs.data, apply_mask(&h, &sched).unwrap());
        assert!(obs.sigma.iter().all(|&s| s == 0.0));

        let n1 = observe(&h, &sched, 10.0, 9).unwrap();
        let n2 = observe(&h, &sched, 10.0, 9).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1.data, obs.data);
    }

    #[test]
    fn nyquist_arithmetic() {
        assert!((doppler_nyquist(0.040) - 12.5).abs() < 1e-12);
        let kmh = max_unaliased_speed(0.040, 3.5e9) * 3.6;
        assert!((kmh - 3.854).abs() < 1e-3, "{kmh}");
    }
}
