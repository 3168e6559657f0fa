//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or exceeds its time budget.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use dda_core::channel_sim::{
    doppler_nyquist, max_unaliased_speed, observe, sample_paths, synthesize_window, ChannelWindow, Scenario,
    SystemConfig,
};
use dda_core::dc::{dc_residual_check, dc_update, DcParams, DEFAULT_NOISE_FLOOR};
use dda_core::denoiser::{
    apply_denoiser, load_bank, load_weights, random_weights, save_bank, save_weights, DenoiserBank, DenoiserSpec,
};
use dda_core::eval::{read_results, run_sweep, ExperimentConfig, SampleSource};
use dda_core::pilots::{covering_radius, enumerate_offsets, schedule, BlockLayout, PilotKind};
use dda_core::rng::{self, derive_seed, Purpose};
use dda_core::solvers::admm::admm_solve_observed;
use dda_core::solvers::tune::{tune_hyperparams, DevSample, TuneGrid};
use dda_core::solvers::unfolded::unfolded_forward_observed;
use dda_core::solvers::{
    AdmmParams, FistaParams, PriorOperator, SolverConfig, TemporalMode, UnfoldedParams,
};
use dda_core::transforms::{
    analysis, build_dictionaries, gram_deviation, row_gram_deviation, sensing_for_schedule, synthesis, DdaTensor,
    Domain,
};
use dda_core::verify::dense_dc_oracle;
use dda_core::{Result, C64};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn gaussian(shape: (usize, usize, usize), index: u64) -> Array3<C64> {
    let mut r = rng::stream(SEED, Purpose::Test, index);
    Array3::from_shape_simple_fn(shape, || C64::new(r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal)))
}

fn io_err(path: &std::path::Path, source: std::io::Error) -> dda_core::Error {
    dda_core::Error::Io { path: path.into(), source }
}

fn scratch() -> Result<tempfile::TempDir> {
    tempfile::tempdir().map_err(|e| io_err(&std::env::temp_dir(), e))
}

fn read(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

fn frob(a: &Array3<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn max_abs(a: &Array3<C64>, b: &Array3<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn dictionaries() -> Result<Outcome> {
    let cfg = SystemConfig::default();
    let mut worst: f64 = 0.0;
    let mut taus = Vec::new();
    for k_fd in 1..=3 {
        let d = build_dictionaries(&cfg, 1, k_fd)?;
        worst = worst.max(gram_deviation(&d.f_sa)).max(row_gram_deviation(&d.f_fd));
        taus.push(d.n_tau);
    }
    outcome(
        worst < 1e-12 && taus == [408, 816, 1224],
        format!("max |G - I| = {worst:.2e}, n_rx = {}, n_tau = {taus:?}", cfg.n_rx()),
    )
}

fn sensing() -> Result<Outcome> {
    let cfg = SystemConfig::default();
    let layout = BlockLayout::new(cfg.n_f, 24)?;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for k_fd in 1..=3 {
        let d = build_dictionaries(&cfg, 1, k_fd)?;
        for kind in [PilotKind::Standard, PilotKind::Mcr] {
            for sched in enumerate_offsets(kind, &layout, cfg.t_w)? {
                for a in sensing_for_schedule(&d, &sched)? {
                    worst = worst.max(row_gram_deviation(&a));
                    count += 1;
                }
            }
        }
    }
    outcome(
        worst < 1e-12 && layout.k == 17,
        format!("max |A A^H - I| = {worst:.2e} over {count} snapshot matrices (K = {}, k_fd 1..3)", layout.k),
    )
}

fn round_trip() -> Result<Outcome> {
    let cfg = SystemConfig::default();
    let dicts: Vec<_> = (1..=3).map(|k| build_dictionaries(&cfg, 1, k)).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let h = ChannelWindow::new(gaussian(cfg.window_shape(), i), cfg.clone())?;
        let back = synthesis(&analysis(&h, &dicts[i as usize % 3])?, &dicts[i as usize % 3])?;
        worst = worst.max(frob(&(&back.data - &h.data)) / frob(&h.data));
    }
    outcome(worst < 1e-12, format!("max relative error {worst:.2e} over 20 windows"))
}

fn dc_oracle() -> Result<Outcome> {
    let small = SystemConfig { n_v: 1, n_h: 2, n_pol: 2, n_f: 12, t_w: 3, ..SystemConfig::default() };
    let layout = BlockLayout::new(small.n_f, 4)?;
    let mut r = rng::stream(SEED, Purpose::Test, 1000);
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let k_fd = 1 + (i % 2) as usize;
        let d = build_dictionaries(&small, 1, k_fd)?;
        let h = synthesize_window(&sample_paths(derive_seed(SEED, &[i]), 3, &Scenario::default(), &small)?, &small)?;
        let kind = if r.random::<bool>() { PilotKind::Mcr } else { PilotKind::Standard };
        let sched = schedule(kind, &layout, small.t_w, r.random_range(0..layout.k))?;
        let y = observe(&h, &sched, r.random_range(0.0..30.0), derive_seed(SEED, &[i, 1]))?;
        let params = DcParams::from_observation(10f64.powf(r.random_range(-1.5..1.0)), &y, DEFAULT_NOISE_FLOOR)?;
        let v = DdaTensor { data: gaussian(d.dda_shape(), 2000 + i), domain: Domain::Time };
        let fast = dc_update(&v, &y, &d, &params)?;
        let dense = dense_dc_oracle(&v, &y, &d, &params)?;
        worst = worst.max(frob(&(&fast.data - &dense.data)) / frob(&dense.data));
    }

    let cfg = SystemConfig::default();
    let d = build_dictionaries(&cfg, 1, 3)?;
    let layout = BlockLayout::new(cfg.n_f, 24)?;
    let h = synthesize_window(&sample_paths(SEED, 6, &Scenario::default(), &cfg)?, &cfg)?;
    let mut stat: f64 = 0.0;
    for (j, (kind, snr)) in [(PilotKind::Mcr, 10.0), (PilotKind::Standard, 0.0), (PilotKind::Mcr, 25.0)].into_iter().enumerate() {
        let sched = schedule(kind, &layout, cfg.t_w, 5 * j)?;
        let y = observe(&h, &sched, snr, derive_seed(SEED, &[99, j as u64]))?;
        let params = DcParams::from_observation(0.2 + j as f64, &y, DEFAULT_NOISE_FLOOR)?;
        let v = DdaTensor { data: gaussian(d.dda_shape(), 3000 + j as u64), domain: Domain::Time };
        let x = dc_update(&v, &y, &d, &params)?;
        stat = stat.max(dc_residual_check(&x, &v, &y, &d, &params)?);
    }
    outcome(
        worst < 1e-8 && stat < 1e-9,
        format!("oracle max relative error {worst:.2e} over 50 instances; full-size stationarity {stat:.2e}"),
    )
}

fn unfolding() -> Result<Outcome> {
    let n = 8;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut run = |cfg: &SystemConfig, m_p: usize, k_fd: usize, kind: PilotKind, mode: TemporalMode, idx: u64| -> Result<()> {
        let d = build_dictionaries(cfg, 1, k_fd)?;
        let h = synthesize_window(&sample_paths(derive_seed(SEED, &[idx]), 4, &Scenario::default(), cfg)?, cfg)?;
        let sched = schedule(kind, &BlockLayout::new(cfg.n_f, m_p)?, cfg.t_w, idx as usize % 3)?;
        let y = observe(&h, &sched, 15.0, idx)?;
        let (lambda, rho, gamma) = (0.05 + 0.01 * idx as f64, 0.35, 1.0 + 0.1 * (idx % 5) as f64);
        let p = AdmmParams { lambda, rho, gamma, max_iter: n + 2, tol: 0.0, mode, ..AdmmParams::default() };
        let mut admm = Vec::new();
        let a = admm_solve_observed(&y, &d, &p, |s, _| admm.push(s.clone()))?;
        let up = UnfoldedParams::uniform(PriorOperator::SoftThreshold { lambda }, n, rho, gamma, mode);
        let mut unf = Vec::new();
        let u = unfolded_forward_observed(&y, &d, &up, |s, _| unf.push(s.clone()))?;
        worst = worst.max(max_abs(&a.x.data, &u.x.data));
        for (s, t) in unf.iter().zip(&admm) {
            worst = worst
                .max(max_abs(&s.x_tilde.data, &t.x_tilde.data))
                .max(max_abs(&s.z_tilde.data, &t.z_tilde.data))
                .max(max_abs(&s.beta_tilde.data, &t.beta_tilde.data));
        }
        cases += 1;
        Ok(())
    };
    let small = SystemConfig::small();
    let mut idx = 0;
    for mode in [TemporalMode::Doppler3d, TemporalMode::Time3d, TemporalMode::Time2d] {
        for kind in [PilotKind::Mcr, PilotKind::Standard] {
            run(&small, 8, 1 + (idx % 3) as usize, kind, mode, idx)?;
            idx += 1;
        }
    }
    run(&SystemConfig::default(), 24, 3, PilotKind::Mcr, TemporalMode::Doppler3d, idx)?;
    outcome(worst < 1e-10, format!("max elementwise gap {worst:.2e} over {cases} runs, n_iter = {n}"))
}

fn on_grid_scenario() -> Scenario {
    Scenario { on_grid: true, grid_k_fd: 1, ..Scenario::default() }
}

fn recovery_solvers(lambda: f64, rho: f64) -> (SolverConfig, SolverConfig) {
    let mode = TemporalMode::Doppler3d;
    let admm = AdmmParams { lambda, rho, gamma: 1.0, max_iter: 200, tol: 0.0, noise_floor: 1.0, mode };
    let fista = FistaParams { lambda, max_iter: 200, tol: 0.0, noise_floor: 1.0, mode };
    (SolverConfig::Admm(admm), SolverConfig::Fista(fista))
}

fn dev_set(cfg: &SystemConfig, kind: PilotKind, snrs: &[f64], base: u64, n: u64) -> Result<Vec<DevSample>> {
    let layout = BlockLayout::new(cfg.n_f, 8)?;
    let mut dev = Vec::new();
    for i in 0..n {
        let truth = synthesize_window(&sample_paths(derive_seed(base, &[i]), 2, &on_grid_scenario(), cfg)?, cfg)?;
        for (j, &snr) in snrs.iter().enumerate() {
            let sched = schedule(kind, &layout, cfg.t_w, (i as usize + j) % layout.k)?;
            let obs = observe(&truth, &sched, snr, derive_seed(base, &[i, j as u64]))?;
            dev.push(DevSample { truth: truth.clone(), obs });
        }
    }
    Ok(dev)
}

fn grid() -> TuneGrid {
    TuneGrid { lambdas: vec![1e-3, 3e-3, 1e-2, 3e-2, 0.1], rhos: vec![0.1, 0.2, 1.0], gammas: vec![1.0], iterations: vec![200] }
}

fn mean_db(values: &[f64]) -> f64 {
    10.0 * (values.iter().map(|v| 10f64.powf(v / 10.0)).sum::<f64>() / values.len() as f64).log10()
}

fn on_grid_recovery() -> Result<Outcome> {
    let cfg = SystemConfig::small();
    let layout = BlockLayout::new(cfg.n_f, 8)?;
    let d = build_dictionaries(&cfg, 1, 1)?;
    let dev = dev_set(&cfg, PilotKind::Mcr, &[f64::INFINITY], SEED ^ 0xdef, 4)?;
    let (admm0, fista0) = recovery_solvers(0.0, 0.1);
    let ta = tune_hyperparams(&dev, &d, &admm0, &grid())?.best;
    let tf = tune_hyperparams(&dev, &d, &fista0, &grid())?.best;
    let (admm, _) = recovery_solvers(ta.lambda, ta.rho.unwrap_or(0.1));
    let (_, fista) = recovery_solvers(tf.lambda, 0.0);

    let mut per_solver = Vec::new();
    for solver in [&admm, &fista] {
        let mut nmse = Vec::new();
        for i in 0..5u64 {
            let truth = synthesize_window(&sample_paths(derive_seed(SEED, &[60, i]), 2, &on_grid_scenario(), &cfg)?, &cfg)?;
            for sched in enumerate_offsets(PilotKind::Mcr, &layout, cfg.t_w)? {
                let y = observe(&truth, &sched, f64::INFINITY, 0)?;
                let out = solver.solve(&y, &d)?;
                nmse.push(dda_core::eval::nmse_db(&out.h, &truth)?);
            }
        }
        per_solver.push((mean_db(&nmse), nmse.iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
    }
    let (a, f) = (per_solver[0], per_solver[1]);
    outcome(
        a.0 <= -30.0 && f.0 <= -30.0,
        format!(
            "ADMM (lambda {}, rho {}) {:.1} dB (worst {:.1}); FISTA (lambda {}) {:.1} dB (worst {:.1}); 5 samples x {} offsets, 200 iterations",
            ta.lambda,
            ta.rho.unwrap_or(0.0),
            a.0,
            a.1,
            tf.lambda,
            f.0,
            f.1,
            layout.k
        ),
    )
}

fn aliasing() -> Result<Outcome> {
    let cfg = SystemConfig::default();
    let mut differing = 0usize;
    for i in 0..5u64 {
        let paths = sample_paths(derive_seed(SEED, &[70, i]), 4, &Scenario::default(), &cfg)?;
        let a = synthesize_window(&paths, &cfg)?;
        for shift in [1.0, -1.0] {
            let mut p = paths.clone();
            for q in &mut p.paths {
                q.doppler += shift / cfg.delta_t;
            }
            let b = synthesize_window(&p, &cfg)?;
            differing += a.data.iter().zip(b.data.iter()).filter(|(x, y)| x != y).count();
        }
    }
    let nyq = doppler_nyquist(cfg.delta_t);
    let v = max_unaliased_speed(cfg.delta_t, cfg.carrier_freq);
    let kmh = v * 3.6;
    outcome(
        differing == 0 && (nyq - 12.5).abs() < 1e-12 && (v - 1.071).abs() < 5e-4 && (kmh * 10.0).round() == 39.0,
        format!("{differing} differing entries; unambiguous range +-{nyq} Hz, {v:.4} m/s = {kmh:.3} km/h"),
    )
}

fn pilot_ordering() -> Result<Outcome> {
    let full = SystemConfig::default();
    let layout = BlockLayout::new(full.n_f, 24)?;
    let std_r: Vec<f64> = enumerate_offsets(PilotKind::Standard, &layout, 10)?.iter().map(covering_radius).collect();
    let mcr_r: Vec<f64> = enumerate_offsets(PilotKind::Mcr, &layout, 10)?.iter().map(covering_radius).collect();
    let radius_ok = layout.k == 17 && std_r.iter().zip(&mcr_r).all(|(s, m)| m < s);

    let cfg = SystemConfig::small();
    let d = build_dictionaries(&cfg, 1, 1)?;
    let snrs = [f64::INFINITY, 20.0];
    let dir = scratch()?;
    let mut means = Vec::new();
    for kind in [PilotKind::Mcr, PilotKind::Standard] {
        let dev = dev_set(&cfg, kind, &snrs, SEED ^ 0xabc, 4)?;
        let (base, _) = recovery_solvers(0.0, 0.1);
        let best = tune_hyperparams(&dev, &d, &base, &grid())?.best;
        let (solver, _) = recovery_solvers(best.lambda, best.rho.unwrap_or(0.1));
        let exp = ExperimentConfig {
            system: cfg.clone(),
            pilot: kind,
            m_p: 8,
            k_fd: 1,
            solver,
            snrs: snrs.to_vec(),
            source: SampleSource::Generated { n_samples: 20, n_paths: 2, scenario: on_grid_scenario() },
            seed: SEED,
            out: dir.path().join(kind.as_str()),
            jobs: 0,
        };
        let out = run_sweep(&exp)?;
        let (_, rows) = read_results(&out.csv)?;
        let per_snr: Vec<f64> = snrs
            .iter()
            .map(|&s| mean_db(&rows.iter().filter(|r| r.offset.is_some() && r.snr_db == s).map(|r| r.nmse_db).collect::<Vec<_>>()))
            .collect();
        means.push((best.lambda, best.rho.unwrap_or(0.0), per_snr));
    }
    let nmse_ok = means[0].2.iter().zip(&means[1].2).all(|(m, s)| m <= s);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/");
    outcome(
        radius_ok && nmse_ok,
        format!(
            "radius mcr max {:.3} < standard min {:.3}; NMSE inf/20 dB: mcr {} dB (lambda {}, rho {}) vs standard {} dB (lambda {}, rho {})",
            mcr_r.iter().cloned().fold(0.0, f64::max),
            std_r.iter().cloned().fold(f64::INFINITY, f64::min),
            fmt(&means[0].2),
            means[0].0,
            means[0].1,
            fmt(&means[1].2),
            means[1].0,
            means[1].1
        ),
    )
}

fn denoiser() -> Result<Outcome> {
    let spec = DenoiserSpec::for_domain(Domain::Doppler);
    let w = random_weights(SEED, &spec)?;
    let cfg = SystemConfig::small();
    let shape = (cfg.n_rx(), cfg.n_f, cfg.t_w);
    let u = DdaTensor { data: gaussian(shape, 4000), domain: Domain::Doppler };
    let id = apply_denoiser(&u, &w.clone().zero_conv2())?;
    let identity_exact = id.data == u.data;

    let roll = |x: &Array3<C64>, s: usize| {
        let t_w = x.dim().2;
        Array3::from_shape_fn(x.dim(), |(a, b, t)| x[[a, b, (t + t_w - s) % t_w]])
    };
    let base = apply_denoiser(&u, &w)?.data;
    let mut eq: f64 = 0.0;
    for s in 1..cfg.t_w {
        let shifted = apply_denoiser(&DdaTensor { data: roll(&u.data, s), domain: Domain::Doppler }, &w)?.data;
        eq = eq.max(max_abs(&roll(&base, s), &shifted));
    }

    let dir = scratch()?;
    let p = dir.path().join("w.ddaw");
    save_weights(&w, &p)?;
    let back = load_weights(&p)?;
    let p2 = dir.path().join("w2.ddaw");
    save_weights(&back, &p2)?;
    let bank = DenoiserBank::random(SEED, &spec, 8)?;
    let pb = dir.path().join("bank.ddaw");
    save_bank(&bank, &pb)?;
    let round_trip = back == w && read(&p)? == read(&p2)? && load_bank(&pb, 8)? == bank;
    outcome(
        identity_exact && eq < 1e-6 && round_trip,
        format!(
            "identity {}; max shift-equivariance gap {eq:.2e} over shifts 1..{}; weights round trip {}",
            if identity_exact { "exact" } else { "inexact" },
            cfg.t_w - 1,
            if round_trip { "bit-exact" } else { "differs" }
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let dir = scratch()?;
    let (solver, _) = recovery_solvers(0.01, 0.1);
    let mut sets = Vec::new();
    let mut tasks = 0;
    for jobs in [1, 8] {
        let exp = ExperimentConfig {
            system: SystemConfig::small(),
            pilot: PilotKind::Mcr,
            m_p: 8,
            k_fd: 1,
            solver: solver.clone(),
            snrs: vec![f64::INFINITY, 20.0, 10.0],
            source: SampleSource::Generated { n_samples: 20, n_paths: 2, scenario: Scenario::default() },
            seed: SEED,
            out: dir.path().join(format!("jobs{jobs}")),
            jobs,
        };
        let out = run_sweep(&exp)?;
        tasks = out.total_tasks;
        let (_, rows) = read_results(&out.csv)?;
        let set: BTreeSet<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{}|{:?}|{}|{}|{}|{}|{}|{:016x}|{}",
                    r.sample_id,
                    r.offset,
                    r.snr_db,
                    r.solver,
                    r.variant,
                    r.kfd,
                    r.pilot,
                    r.nmse_db.to_bits(),
                    r.iters
                )
            })
            .collect();
        sets.push(set);
    }
    outcome(
        !sets[0].is_empty() && sets[0] == sets[1],
        format!("{} rows from {tasks} tasks, identical at jobs 1 and 8 (wall time excluded)", sets[0].len()),
    )
}

type Criterion = (&'static str, f64, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("dictionary invariants", 5.0, dictionaries),
        ("sensing row-orthonormality", 5.0, sensing),
        ("exact round trip", 30.0, round_trip),
        ("DC oracle equivalence", 60.0, dc_oracle),
        ("ADMM equals unfolded", 60.0, unfolding),
        ("on-grid sparse recovery", 120.0, on_grid_recovery),
        ("Doppler aliasing identity", 1.0, aliasing),
        ("pilot-pattern ordering", 600.0, pilot_ordering),
        ("denoiser identity and equivariance", 10.0, denoiser),
        ("sweep determinism", 300.0, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && secs < *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "{} {:2} {name}: {detail} [{secs:.2} s, budget {budget} s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
