//! Per-snapshot minimum-norm least squares.
//!
//! `X_t = f_sa^H Y_t A_t` and `Ĥ_t = f_sa X_t f_fd^H`. Because
//! `f_fd f_fd^H = I`, the composition reduces to placing `Y_t` on the observed
//! subcarriers and zeros elsewhere; [`ls_estimate`] uses that form directly.

use ndarray::{s, Array3};

use crate::channel_sim::{ChannelWindow, ObservationWindow};
use crate::transforms::{sensing_for_schedule, DdaTensor, DictionarySet, Domain};
use crate::{Error, Result, C64};

fn check(y: &ObservationWindow, dict: &DictionarySet) -> Result<()> {
    let (n_rx, m_p, t_w) = y.data.dim();
    let cfg = &dict.config;
    if n_rx != cfg.n_rx() || t_w != cfg.t_w || m_p != y.schedule.m_p || y.schedule.n_f() != cfg.n_f {
        return Err(Error::Shape(format!("observation {:?} does not match the system", y.data.dim())));
    }
    Ok(())
}

/// Least-squares coefficients `X_t = f_sa^H Y_t A_t`.
pub fn ls_coefficients(y: &ObservationWindow, dict: &DictionarySet) -> Result<DdaTensor> {
    check(y, dict)?;
    let a = sensing_for_schedule(dict, &y.schedule)?;
    let sa_h = dict.f_sa.t().mapv(|v| v.conj());
    let mut x = DdaTensor::zeros(dict.dda_shape(), Domain::Time);
    for (t, at) in a.iter().enumerate() {
        let xt = sa_h.dot(&y.data.slice(s![.., .., t])).dot(at);
        x.data.slice_mut(s![.., .., t]).assign(&xt);
    }
    Ok(x)
}

/// Least-squares channel estimate: observed columns reproduced, the rest zero.
pub fn ls_estimate(y: &ObservationWindow, dict: &DictionarySet) -> Result<ChannelWindow> {
    check(y, dict)?;
    let mut data = Array3::<C64>::zeros(dict.config.window_shape());
    for t in 0..dict.config.t_w {
        let w = y.schedule.omega(t);
        data.slice_mut(s![.., w, t]).assign(&y.data.slice(s![.., .., t]));
    }
    Ok(ChannelWindow { data, config: dict.config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{observe, synthesize_window, Path, PathSet, SystemConfig};
    use crate::pilots::{apply_mask, mcr_schedule, BlockLayout};
    use crate::transforms::{build_dictionaries, frobenius, synthesis};

    fn flat(cfg: &SystemConfig) -> ChannelWindow {
        let p = Path {
            gain: C64::new(1.0, 0.0),
            delay: 0.0,
            doppler: 0.0,
            theta_v: 0.0,
            theta_h: 0.0,
            pol_weights: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        };
        synthesize_window(&PathSet { paths: vec![p], seed: 0 }, cfg).unwrap()
    }

    #[test]
    fn reproduces_observed_columns_and_matches_coefficients() {
        let cfg = SystemConfig::small();
        let layout = BlockLayout::new(cfg.n_f, 8).unwrap();
        let sched = mcr_schedule(&layout, cfg.t_w, 2).unwrap();
        let h = flat(&cfg);
        let y = observe(&h, &sched, f64::INFINITY, 0).unwrap();
        for k_fd in 1..=3 {
            let dict = build_dictionaries(&cfg, 1, k_fd).unwrap();
            let est = ls_estimate(&y, &dict).unwrap();
            assert_eq!(apply_mask(&est, &sched).unwrap(), y.data);
            let via_coeffs = synthesis(&ls_coefficients(&y, &dict).unwrap(), &dict).unwrap();
            assert!(frobenius(&(&via_coeffs.data - &est.data)) < 1e-12 * frobenius(&est.data));
        }
    }

    #[test]
    fn flat_channel_error_is_the_unobserved_energy() {
        let cfg = SystemConfig::small();
        let dict = build_dictionaries(&cfg, 1, 1).unwrap();
        let layout = BlockLayout::new(cfg.n_f, 8).unwrap();
        let sched = mcr_schedule(&layout, cfg.t_w, 0).unwrap();
        let h = flat(&cfg);
        let y = observe(&h, &sched, f64::INFINITY, 0).unwrap();
        let est = ls_estimate(&y, &dict).unwrap();
        let err = frobenius(&(&est.data - &h.data)).powi(2);
        let ratio = err / h.energy();
        let expected = 1.0 - 8.0 / 40.0;
        assert!((ratio - expected).abs() < 1e-12, "{ratio}");
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = SystemConfig::small();
        let dict = build_dictionaries(&cfg, 1, 2).unwrap();
        let sched = mcr_schedule(&BlockLayout::new(cfg.n_f, 8).unwrap(), cfg.t_w, 0).unwrap();
        let y = observe(&ChannelWindow::zeros(&cfg), &sched, f64::INFINITY, 0).unwrap();
        assert_eq!(ls_estimate(&y, &dict).unwrap().energy(), 0.0);
    }
}
