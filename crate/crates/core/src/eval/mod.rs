//! NMSE metric, the all-offset evaluation protocol and SNR sweeps.
//!
//! Per-offset NMSE values are averaged in linear scale and converted to dB
//! afterwards. Exact recoveries are clamped to [`NMSE_FLOOR_DB`] so result
//! files stay finite.

mod sweep;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel_sim::{observe, ChannelWindow, Scenario, SystemConfig};
use crate::pilots::{schedule, BlockLayout, PilotKind};
use crate::rng::derive_seed;
use crate::solvers::SolverConfig;
use crate::transforms::{frobenius, DictionarySet};
use crate::{Error, Result};

pub use sweep::{read_results, run_sweep, write_results, run_sweep_with, SummaryEntry, SweepOptions, SweepOutcome, CSV_SCHEMA};

pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `‖Ĥ−H‖² / ‖H‖²`.
pub fn nmse_linear(h_hat: &ChannelWindow, h: &ChannelWindow) -> Result<f64> {
    if h_hat.data.dim() != h.data.dim() {
        return Err(Error::Shape(format!("estimate {:?} vs reference {:?}", h_hat.data.dim(), h.data.dim())));
    }
    let e = h.energy();
    if e == 0.0 {
        return Err(Error::InvalidArgument("NMSE against an all-zero reference".into()));
    }
    Ok(frobenius(&(&h_hat.data - &h.data)).powi(2) / e)
}

/// `10 log10(v)`, clamped below at [`NMSE_FLOOR_DB`].
pub fn linear_to_db(v: f64) -> f64 {
    if v.is_nan() {
        return f64::NAN;
    }
    if v <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * v.log10()).max(NMSE_FLOOR_DB)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn nmse_db(h_hat: &ChannelWindow, h: &ChannelWindow) -> Result<f64> {
    Ok(linear_to_db(nmse_linear(h_hat, h)?))
}

/// One CSV row. `offset` is empty for offset-mean aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sample_id: usize,
    pub offset: Option<usize>,
    pub snr_db: f64,
    pub solver: String,
    pub variant: String,
    pub kfd: usize,
    pub pilot: String,
    pub nmse_db: f64,
    pub iters: usize,
    pub wall_s: f64,
}

/// Where sweep samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    Generated { n_samples: usize, n_paths: usize, scenario: Scenario },
    Dataset(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub pilot: PilotKind,
    pub m_p: usize,
    pub k_fd: usize,
    pub solver: SolverConfig,
    pub snrs: Vec<f64>,
    pub source: SampleSource,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if self.snrs.is_empty() {
            return Err(Error::Config("the SNR list is empty".into()));
        }
        if self.snrs.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("SNR values must be finite or +inf".into()));
        }
        if let SampleSource::Generated { n_samples, n_paths, .. } = &self.source {
            if *n_samples == 0 {
                return Err(Error::Config("sample count must be at least 1".into()));
            }
            if *n_paths == 0 {
                return Err(Error::Config("path count must be at least 1".into()));
            }
        }
        BlockLayout::new(self.system.n_f, self.m_p)?;
        if !(1..=3).contains(&self.k_fd) {
            return Err(Error::Config(format!("k_fd must be 1, 2 or 3, got {}", self.k_fd)));
        }
        Ok(())
    }
}

/// Protocol parameters shared by every offset of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalContext {
    pub pilot: PilotKind,
    pub m_p: usize,
    pub snr_db: f64,
    pub seed: u64,
}

/// Result of [`evaluate_all_offsets`].
#[derive(Debug, Clone)]
pub struct OffsetEvaluation {
    /// Successful offsets, in offset order.
    pub records: Vec<ResultRecord>,
    /// Linear-mean over `records`; `None` when every offset failed.
    pub aggregate: Option<ResultRecord>,
    pub failures: Vec<(usize, String)>,
}

/// Noise seed of one (sample, offset, SNR) task.
pub fn noise_seed(seed: u64, sample_id: usize, offset: usize, snr_db: f64) -> u64 {
    derive_seed(seed, &[sample_id as u64, offset as u64, snr_db.to_bits()])
}

/// Observes `truth` at one pilot offset and reconstructs it.
pub fn evaluate_offset(
    sample_id: usize,
    truth: &ChannelWindow,
    solver: &SolverConfig,
    dict: &DictionarySet,
    ctx: &EvalContext,
    offset: usize,
) -> Result<ResultRecord> {
    let layout = BlockLayout::new(truth.config.n_f, ctx.m_p)?;
    let sched = schedule(ctx.pilot, &layout, truth.config.t_w, offset)?;
    let y = observe(truth, &sched, ctx.snr_db, noise_seed(ctx.seed, sample_id, offset, ctx.snr_db))?;
    let start = Instant::now();
    let out = solver.solve(&y, dict)?;
    let wall_s = start.elapsed().as_secs_f64();
    let nmse_db = nmse_db(&out.h, truth)?;
    if !nmse_db.is_finite() {
        return Err(Error::NonFinite("NMSE".into()));
    }
    Ok(ResultRecord {
        sample_id,
        offset: Some(offset),
        snr_db: ctx.snr_db,
        solver: solver.name().into(),
        variant: solver.variant().into(),
        kfd: dict.k_fd,
        pilot: ctx.pilot.as_str().into(),
        nmse_db,
        iters: out.iterations,
        wall_s,
    })
}

/// Runs every pilot offset of the pattern on one sample.
pub fn evaluate_all_offsets(
    sample_id: usize,
    truth: &ChannelWindow,
    solver: &SolverConfig,
    dict: &DictionarySet,
    ctx: &EvalContext,
) -> Result<OffsetEvaluation> {
    let k = BlockLayout::new(truth.config.n_f, ctx.m_p)?.k;
    let mut records = Vec::with_capacity(k);
    let mut failures = Vec::new();
    for offset in 0..k {
        match evaluate_offset(sample_id, truth, solver, dict, ctx, offset) {
            Ok(r) => records.push(r),
            Err(e) => failures.push((offset, e.to_string())),
        }
    }
    let aggregate = aggregate(&records);
    Ok(OffsetEvaluation { records, aggregate, failures })
}

/// Offset-mean record: linear mean NMSE, summed wall time, maximum iteration count.
pub fn aggregate(records: &[ResultRecord]) -> Option<ResultRecord> {
    let first = records.first()?;
    let mean = records.iter().map(|r| db_to_linear(r.nmse_db)).sum::<f64>() / records.len() as f64;
    Some(ResultRecord {
        offset: None,
        nmse_db: linear_to_db(mean),
        iters: records.iter().map(|r| r.iters).max().unwrap_or(0),
        wall_s: records.iter().map(|r| r.wall_s).sum(),
        ..first.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{sample_paths, synthesize_window};
    use crate::solvers::{AdmmParams, TemporalMode};
    use crate::transforms::build_dictionaries;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn window(seed: u64) -> ChannelWindow {
        let cfg = SystemConfig::small();
        synthesize_window(&sample_paths(seed, 3, &Scenario::default(), &cfg).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn trivial_nmse_values() {
        let h = window(1);
        assert_eq!(nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
        let zero = ChannelWindow::zeros(&h.config);
        assert!(nmse_db(&zero, &h).unwrap().abs() < 1e-12);
        let twice = ChannelWindow { data: &h.data * crate::C64::new(2.0, 0.0), ..h.clone() };
        assert!(nmse_db(&twice, &h).unwrap().abs() < 1e-12);
        assert!(nmse_db(&h, &zero).is_err());
        assert!(nmse_db(&ChannelWindow::zeros(&SystemConfig::default()), &h).is_err());
    }

    #[test]
    fn nmse_invariant_under_receive_rotation() {
        let h = window(2);
        let mut h_hat = window(3);
        h_hat.data.mapv_inplace(|v| v * 0.3);
        h_hat.data += &h.data;
        let n = h.config.n_rx();
        // unitary DFT acting on the receive axis
        let u = Array2::from_shape_fn((n, n), |(i, j)| {
            crate::C64::from_polar(1.0 / (n as f64).sqrt(), -2.0 * std::f64::consts::PI * (i * j) as f64 / n as f64)
        });
        let rot = |w: &ChannelWindow| {
            let (a, b, c) = w.data.dim();
            let flat = w.data.to_shape((a, b * c)).unwrap().to_owned();
            ChannelWindow { data: u.dot(&flat).into_shape_with_order((a, b, c)).unwrap(), ..w.clone() }
        };
        let before = nmse_db(&h_hat, &h).unwrap();
        let after = nmse_db(&rot(&h_hat), &rot(&h)).unwrap();
        assert!((before - after).abs() < 1e-9);
    }

    fn ctx(snr: f64, pilot: PilotKind) -> EvalContext {
        EvalContext { pilot, m_p: 8, snr_db: snr, seed: 11 }
    }

    #[test]
    fn all_offsets_records_and_aggregate() {
        let h = window(4);
        let dict = build_dictionaries(&h.config, 1, 1).unwrap();
        let solver = SolverConfig::Admm(AdmmParams { max_iter: 20, mode: TemporalMode::Time3d, ..AdmmParams::default() });
        let ev = evaluate_all_offsets(0, &h, &solver, &dict, &ctx(20.0, PilotKind::Mcr)).unwrap();
        assert_eq!(ev.records.len(), 5);
        assert!(ev.failures.is_empty());
        let agg = ev.aggregate.clone().unwrap();
        let by_hand = ev.records.iter().map(|r| 10f64.powf(r.nmse_db / 10.0)).sum::<f64>() / 5.0;
        assert!((agg.nmse_db - 10.0 * by_hand.log10()).abs() < 1e-12);
        let lo = ev.records.iter().map(|r| r.nmse_db).fold(f64::INFINITY, f64::min);
        let hi = ev.records.iter().map(|r| r.nmse_db).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= agg.nmse_db && agg.nmse_db <= hi);
        assert_eq!(agg.offset, None);
        let again = evaluate_all_offsets(0, &h, &solver, &dict, &ctx(20.0, PilotKind::Mcr)).unwrap();
        let strip = |v: &[ResultRecord]| v.iter().map(|r| (r.offset, r.nmse_db, r.iters)).collect::<Vec<_>>();
        assert_eq!(strip(&ev.records), strip(&again.records));
    }

    #[test]
    fn ls_full_observation_hits_floor() {
        let h = window(5);
        let dict = build_dictionaries(&h.config, 1, 1).unwrap();
        let c = EvalContext { m_p: h.config.n_f, ..ctx(f64::INFINITY, PilotKind::Standard) };
        let ev = evaluate_all_offsets(0, &h, &SolverConfig::Ls, &dict, &c).unwrap();
        assert_eq!(ev.records.len(), 1);
        assert!(ev.records[0].nmse_db < -250.0, "{}", ev.records[0].nmse_db);
    }

    #[test]
    fn failures_are_counted_not_aggregated() {
        let h = window(6);
        let dict = build_dictionaries(&h.config, 1, 1).unwrap();
        let bad = SolverConfig::Admm(AdmmParams { gamma: 5.0, ..AdmmParams::default() });
        let ev = evaluate_all_offsets(0, &h, &bad, &dict, &ctx(20.0, PilotKind::Standard)).unwrap();
        assert!(ev.records.is_empty());
        assert_eq!(ev.failures.len(), 5);
        assert!(ev.aggregate.is_none());
    }

    proptest! {
        #[test]
        fn aggregate_lies_between_extremes(v in proptest::collection::vec(-80.0f64..10.0, 1..20)) {
            let recs: Vec<ResultRecord> = v.iter().enumerate().map(|(i, &n)| ResultRecord {
                sample_id: 0, offset: Some(i), snr_db: 0.0, solver: "ls".into(), variant: "-".into(),
                kfd: 1, pilot: "mcr".into(), nmse_db: n, iters: 0, wall_s: 0.0,
            }).collect();
            let a = aggregate(&recs).unwrap().nmse_db;
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
        }

        #[test]
        fn linear_db_round_trip(x in -250.0f64..50.0) {
            prop_assert!((linear_to_db(db_to_linear(x)) - x).abs() < 1e-9);
        }
    }
}
