//! Resumable SNR × sample × offset sweeps.
//!
//! Output directory layout:
//!
//! ```text
//! results.csv    #schema line, #run fingerprint line, header, one row per task
//! manifest.txt   one "snr_index:sample:offset" key per completed task
//! summary.json   mean NMSE per (solver, pilot, variant, kfd, snr)
//! ```
//!
//! A row counts as done only once its key is in the manifest, so a crash
//! between the two appends just reruns that task. On completion the CSV is
//! rewritten in task order, which makes it independent of the worker count
//! apart from `wall_s`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel_sim::ChannelWindow;
use crate::dataset::{generate, read_dataset};
use crate::pilots::BlockLayout;
use crate::solvers::SolverConfig;
use crate::transforms::build_dictionaries;
use crate::{Error, Result};

use super::{db_to_linear, evaluate_offset, linear_to_db, EvalContext, ExperimentConfig, ResultRecord, SampleSource};

pub const CSV_SCHEMA: &str = "dda-results/1";
const RESULTS: &str = "results.csv";
const MANIFEST: &str = "manifest.txt";
const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Stop after this many newly completed tasks, leaving the run resumable.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub solver: String,
    pub pilot: String,
    pub variant: String,
    pub kfd: usize,
    /// `"inf"` for the noiseless case.
    pub snr_db: String,
    pub mean_nmse_db: f64,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub csv: PathBuf,
    pub summary: Option<PathBuf>,
    pub total_tasks: usize,
    /// Tasks completed by this call.
    pub completed: usize,
    /// Tasks already done by an earlier call.
    pub resumed: usize,
    pub failures: Vec<(String, String)>,
    pub interrupted: bool,
    pub entries: Vec<SummaryEntry>,
}

impl SweepOutcome {
    /// 0 on success, 2 if any task failed or the run was cut short.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() && !self.interrupted {
            0
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Task {
    snr_index: usize,
    sample: usize,
    offset: usize,
}

impl Task {
    fn key(&self) -> String {
        format!("{}:{}:{}", self.snr_index, self.sample, self.offset)
    }
}

fn snr_label(snr: f64) -> String {
    if snr == f64::INFINITY {
        "inf".into()
    } else {
        format!("{snr}")
    }
}

fn solver_fingerprint(s: &SolverConfig) -> String {
    match s {
        SolverConfig::Ls => "ls".into(),
        SolverConfig::Fista(p) => format!("{p:?}"),
        SolverConfig::Admm(p) => format!("{p:?}"),
        SolverConfig::Unfolded(p) => {
            let priors: Vec<String> = std::iter::once(&p.init_prior)
                .chain(&p.stage_priors)
                .map(|q| match q {
                    crate::solvers::PriorOperator::Denoiser(w) => {
                        format!("denoiser:{}", crate::denoiser::fingerprint(w))
                    }
                    other => format!("{}:{}", other.kind(), other.lambda()),
                })
                .collect();
            format!("unfolded rho={} gamma={} floor={} mode={} priors=[{}]", p.rho, p.gamma, p.noise_floor, p.mode, priors.join(","))
        }
    }
}

fn run_fingerprint(cfg: &ExperimentConfig) -> String {
    let source = match &cfg.source {
        SampleSource::Generated { n_samples, n_paths, scenario } => format!("generated:{n_samples}:{n_paths}:{scenario:?}"),
        SampleSource::Dataset(p) => format!("dataset:{}", p.display()),
    };
    let snrs: Vec<String> = cfg.snrs.iter().map(|&s| snr_label(s)).collect();
    format!(
        "system={:?};pilot={};m_p={};kfd={};solver={};snrs={};seed={};source={}",
        cfg.system,
        cfg.pilot,
        cfg.m_p,
        cfg.k_fd,
        solver_fingerprint(&cfg.solver),
        snrs.join(","),
        cfg.seed,
        source
    )
}

fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<ChannelWindow>> {
    match &cfg.source {
        SampleSource::Generated { n_samples, n_paths, scenario } => {
            Ok(generate(&cfg.system, *n_samples, *n_paths, scenario, cfg.seed)?.samples)
        }
        SampleSource::Dataset(path) => {
            let ds = read_dataset(path)?;
            if ds.config.window_shape() != cfg.system.window_shape() {
                return Err(Error::Config(format!(
                    "dataset window {:?} does not match the configured system {:?}",
                    ds.config.window_shape(),
                    cfg.system.window_shape()
                )));
            }
            if ds.samples.is_empty() {
                return Err(Error::Config(format!("{} holds no samples", path.display())));
            }
            Ok(ds.samples)
        }
    }
}

fn write_csv(path: &Path, fingerprint: &str, rows: &[ResultRecord]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
        writeln!(f, "#schema={CSV_SCHEMA}").map_err(|e| Error::io(&tmp, e))?;
        writeln!(f, "#run={fingerprint}").map_err(|e| Error::io(&tmp, e))?;
        let mut w = csv::Writer::from_writer(f);
        if rows.is_empty() {
            w.write_record(["sample_id", "offset", "snr_db", "solver", "variant", "kfd", "pilot", "nmse_db", "iters", "wall_s"])?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `rows` as a results CSV without a run fingerprint.
pub fn write_results(path: &Path, rows: &[ResultRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_csv(path, "", rows)
}

/// Reads a results CSV, checking its schema line. Returns the run fingerprint and the rows.
pub fn read_results(path: &Path) -> Result<(String, Vec<ResultRecord>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || lines.next().transpose().map_err(|e| Error::io(path, e));
    let schema = next()?.unwrap_or_default();
    if schema != format!("#schema={CSV_SCHEMA}") {
        return Err(Error::format(path, format!("unsupported results schema line '{schema}'")));
    }
    let fingerprint = next()?.and_then(|l| l.strip_prefix("#run=").map(str::to_string)).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<ResultRecord>, _>>()?;
    Ok((fingerprint, rows))
}

fn read_manifest(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn row_key(r: &ResultRecord, snrs: &[f64]) -> Option<String> {
    let i = snrs.iter().position(|s| s.to_bits() == r.snr_db.to_bits())?;
    Some(format!("{}:{}:{}", i, r.sample_id, r.offset?))
}

fn summarize(rows: &[ResultRecord], snrs: &[f64]) -> Vec<SummaryEntry> {
    let mut groups: BTreeMap<(String, String, String, usize, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let i = snrs.iter().position(|s| s.to_bits() == r.snr_db.to_bits()).unwrap_or(usize::MAX);
        let g = groups.entry((r.solver.clone(), r.pilot.clone(), r.variant.clone(), r.kfd, i)).or_insert((0.0, 0));
        g.0 += db_to_linear(r.nmse_db);
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|((solver, pilot, variant, kfd, i), (sum, n))| SummaryEntry {
            solver,
            pilot,
            variant,
            kfd,
            snr_db: snrs.get(i).map(|&s| snr_label(s)).unwrap_or_default(),
            mean_nmse_db: linear_to_db(sum / n as f64),
            rows: n,
        })
        .collect()
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    run_sweep_with(cfg, &SweepOptions::default())
}

/// Runs (or resumes) the sweep described by `cfg` in `cfg.out`.
pub fn run_sweep_with(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let samples = load_samples(cfg)?;
    let system = samples[0].config.clone();
    let dict = build_dictionaries(&system, 1, cfg.k_fd)?;
    let k = BlockLayout::new(system.n_f, cfg.m_p)?.k;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join(RESULTS);
    let manifest_path = out.join(MANIFEST);
    let summary_path = out.join(SUMMARY);
    let fingerprint = run_fingerprint(cfg);

    let mut kept: Vec<ResultRecord> = Vec::new();
    let mut done: HashSet<String> = HashSet::new();
    if csv_path.exists() && manifest_path.exists() {
        let (fp, rows) = read_results(&csv_path)?;
        if fp != fingerprint {
            return Err(Error::Config(format!(
                "{} belongs to a different run configuration; use a fresh output directory",
                out.display()
            )));
        }
        let manifest = read_manifest(&manifest_path)?;
        for r in rows {
            if let Some(key) = row_key(&r, &cfg.snrs) {
                if manifest.contains(&key) && done.insert(key) {
                    kept.push(r);
                }
            }
        }
    }
    write_csv(&csv_path, &fingerprint, &kept)?;
    let manifest_text: String = kept.iter().filter_map(|r| row_key(r, &cfg.snrs)).map(|k| k + "\n").collect();
    std::fs::write(&manifest_path, manifest_text).map_err(|e| Error::io(&manifest_path, e))?;
    let _ = std::fs::remove_file(&summary_path);

    let mut tasks = Vec::new();
    for snr_index in 0..cfg.snrs.len() {
        for sample in 0..samples.len() {
            for offset in 0..k {
                tasks.push(Task { snr_index, sample, offset });
            }
        }
    }
    let total_tasks = tasks.len();
    let resumed = done.len();
    let todo: Vec<Task> = tasks.into_iter().filter(|t| !done.contains(&t.key())).collect();

    let jobs = if cfg.jobs == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { cfg.jobs };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(Task, Result<ResultRecord>)>();

    let (completed, failures, interrupted) = std::thread::scope(|scope| -> Result<(usize, Vec<(String, String)>, bool)> {
        let writer = scope.spawn(|| -> Result<(usize, Vec<(String, String)>, bool)> {
            let file = OpenOptions::new().append(true).open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            let mut man = OpenOptions::new().append(true).open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let mut completed = 0;
            let mut failures = Vec::new();
            for (task, res) in rx {
                if stop.load(Ordering::SeqCst) {
                    continue;
                }
                match res {
                    Ok(rec) => {
                        w.serialize(&rec)?;
                        w.flush().map_err(|e| Error::io(&csv_path, e))?;
                        writeln!(man, "{}", task.key()).map_err(|e| Error::io(&manifest_path, e))?;
                        man.flush().map_err(|e| Error::io(&manifest_path, e))?;
                        completed += 1;
                    }
                    Err(e) => failures.push((task.key(), e.to_string())),
                }
                if opts.stop_after.is_some_and(|n| completed >= n) {
                    stop.store(true, Ordering::SeqCst);
                }
            }
            Ok((completed, failures, stop.load(Ordering::SeqCst)))
        });
        pool.install(|| {
            todo.par_iter().for_each_with(tx, |tx, task| {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                let ctx = EvalContext { pilot: cfg.pilot, m_p: cfg.m_p, snr_db: cfg.snrs[task.snr_index], seed: cfg.seed };
                let res = evaluate_offset(task.sample, &samples[task.sample], &cfg.solver, &dict, &ctx, task.offset);
                let _ = tx.send((*task, res));
            });
        });
        writer.join().expect("writer thread panicked")
    })?;

    let mut outcome = SweepOutcome {
        csv: csv_path.clone(),
        summary: None,
        total_tasks,
        completed,
        resumed,
        failures,
        interrupted,
        entries: Vec::new(),
    };
    if interrupted {
        return Ok(outcome);
    }

    let (_, rows) = read_results(&csv_path)?;
    let mut rows: Vec<(Task, ResultRecord)> = rows
        .into_iter()
        .filter_map(|r| {
            let i = cfg.snrs.iter().position(|s| s.to_bits() == r.snr_db.to_bits())?;
            Some((Task { snr_index: i, sample: r.sample_id, offset: r.offset? }, r))
        })
        .collect();
    rows.sort_by_key(|(t, _)| (t.snr_index, t.sample, t.offset));
    rows.dedup_by_key(|(t, _)| (t.snr_index, t.sample, t.offset));
    let rows: Vec<ResultRecord> = rows.into_iter().map(|(_, r)| r).collect();
    write_csv(&csv_path, &fingerprint, &rows)?;
    outcome.entries = summarize(&rows, &cfg.snrs);
    let json = serde_json::json!({
        "schema": "dda-summary/1",
        "tasks": total_tasks,
        "failed": outcome.failures.len(),
        "entries": outcome.entries,
    });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&json)? + "\n").map_err(|e| Error::io(&summary_path, e))?;
    outcome.summary = Some(summary_path);
    Ok(outcome)
}
