use ndarray::Array3;
use proptest::prelude::*;

use dda_core::channel_sim::{ChannelWindow, SystemConfig};
use dda_core::config::Settings;
use dda_core::denoiser::{apply_denoiser, random_weights, DenoiserSpec};
use dda_core::pilots::{covering_radius, schedule, BlockLayout, PilotKind};
use dda_core::transforms::{
    analysis, build_dictionaries, row_gram_deviation, sensing_for_schedule, synthesis, to_doppler, to_time, DdaTensor,
    Domain,
};
use dda_core::C64;

fn tensor(shape: (usize, usize, usize), seed: u64) -> Array3<C64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut next = || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    Array3::from_shape_simple_fn(shape, || C64::new(next(), next()))
}

fn kind(mcr: bool) -> PilotKind {
    if mcr {
        PilotKind::Mcr
    } else {
        PilotKind::Standard
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_any_geometry(n_v in 1usize..3, n_h in 1usize..4, blocks in 1usize..6, m_p in 1usize..5, t_w in 1usize..6, k_fd in 1usize..4, seed: u64) {
        let cfg = SystemConfig { n_v, n_h, n_f: blocks * m_p, t_w, ..SystemConfig::default() };
        let d = build_dictionaries(&cfg, 1, k_fd).unwrap();
        let h = ChannelWindow::new(tensor(cfg.window_shape(), seed), cfg.clone()).unwrap();
        let back = synthesis(&analysis(&h, &d).unwrap(), &d).unwrap();
        let err = (&back.data - &h.data).iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn sensing_rows_orthonormal(blocks in 2usize..9, m_p in 1usize..7, t_w in 1usize..11, k_fd in 1usize..4, offset in 0usize..8, mcr: bool) {
        let cfg = SystemConfig { n_v: 1, n_h: 1, n_f: blocks * m_p, t_w, ..SystemConfig::default() };
        let d = build_dictionaries(&cfg, 1, k_fd).unwrap();
        let layout = BlockLayout::new(cfg.n_f, m_p).unwrap();
        let sched = schedule(kind(mcr), &layout, t_w, offset % layout.k).unwrap();
        for a in sensing_for_schedule(&d, &sched).unwrap() {
            prop_assert_eq!(a.nrows(), m_p);
            prop_assert!(row_gram_deviation(&a) < 1e-12);
        }
    }

    #[test]
    fn full_cycle_partitions_subcarriers(blocks in 1usize..12, m_p in 1usize..6, offset in 0usize..12, mcr: bool) {
        let layout = BlockLayout::new(blocks * m_p, m_p).unwrap();
        let sched = schedule(kind(mcr), &layout, layout.k, offset % layout.k).unwrap();
        let mut hits = vec![0u32; layout.n_f()];
        for w in sched.omegas() {
            prop_assert_eq!(w.len(), m_p);
            for f in w {
                hits[f] += 1;
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
        let r = covering_radius(&sched);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn doppler_transform_is_unitary(n in 1usize..5, taus in 1usize..6, t_w in 1usize..9, seed: u64) {
        let x = DdaTensor { data: tensor((n, taus, t_w), seed), domain: Domain::Time };
        let f = to_doppler(&x).unwrap();
        prop_assert!((f.norm() - x.norm()).abs() < 1e-12 * x.norm().max(1.0));
        let back = to_time(&f).unwrap();
        prop_assert!((&back.data - &x.data).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn denoiser_commutes_with_doppler_shift(seed in 0u64..1000, shift in 1usize..6) {
        let spec = DenoiserSpec { hidden: 3, kernel: (3, 3, 3), ..DenoiserSpec::for_domain(Domain::Doppler) };
        let w = random_weights(seed, &spec).unwrap();
        let u = tensor((4, 6, 6), seed);
        let roll = |x: &Array3<C64>| Array3::from_shape_fn(x.dim(), |(a, b, t)| x[[a, b, (t + 6 - shift) % 6]]);
        let lhs = roll(&apply_denoiser(&DdaTensor { data: u.clone(), domain: Domain::Doppler }, &w).unwrap().data);
        let rhs = apply_denoiser(&DdaTensor { data: roll(&u), domain: Domain::Doppler }, &w).unwrap().data;
        prop_assert!((&lhs - &rhs).iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn echoed_settings_parse_back(n_f in 1usize..500, lambda in 1e-4f64..10.0, seed: u32) {
        let mut s = Settings::default();
        s.merge_toml_str(&format!("[system]\nn_f = {n_f}\n[solver]\nlambda = {lambda}\n[data]\nseed = {seed}\n")).unwrap();
        let mut again = Settings::default();
        again.merge_toml_str(&s.echo()).unwrap();
        for key in s.keys() {
            prop_assert_eq!(s.raw(key).unwrap(), again.raw(key).unwrap(), "{}", key);
        }
        prop_assert_eq!(again.get::<f64>("solver.lambda").unwrap(), lambda);
    }
}
