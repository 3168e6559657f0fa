use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dda_core::channel_sim::{observe, sample_paths, synthesize_window, SystemConfig};
use dda_core::config::{
    scenario_from_settings, system_from_settings, tune_grid_from_settings, Settings,
};
use dda_core::dataset::{generate, read_dataset, sample_seed, write_dataset};
use dda_core::denoiser::{save_bank, save_weights, DenoiserBank, DenoiserSpec};
use dda_core::eval::{aggregate, evaluate_offset, noise_seed, run_sweep, write_results, EvalContext, ExperimentConfig, ResultRecord};
use dda_core::pilots::{covering_radius, enumerate_offsets, schedule, BlockLayout, PilotKind};
use dda_core::solvers::tune::{tune_hyperparams, DevSample};
use dda_core::solvers::TemporalMode;
use dda_core::transforms::build_dictionaries;
use dda_core::verify::{run_verify, Fault, VerifyOptions};

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "dda", version, about = "Windowed MIMO channel reconstruction from hopping pilots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic channel dataset.
    GenData(Common),
    /// Reconstruct one sample at every pilot offset.
    Run(RunArgs),
    /// Full SNR x sample x offset sweep with CSV and summary output.
    Sweep(Common),
    /// Grid-search solver hyperparameters on a development set.
    Tune(Common),
    /// Print pilot schedules and their covering radius.
    Pilots(Common),
    /// Run the self-verification suite.
    Verify(VerifyArgs),
    /// Write randomly initialized denoiser weights.
    WeightsInit(WeightsArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file with dotted configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (file for gen-data).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    kfd: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    pilot: Option<String>,
    #[arg(long = "m-p")]
    m_p: Option<usize>,
    /// Pilot offset, or "all".
    #[arg(long)]
    offset: Option<String>,
    /// Comma-separated SNR list in dB ("inf" for noiseless).
    #[arg(long)]
    snrs: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long = "on-grid")]
    on_grid: bool,
    /// Dataset to read samples from instead of generating them.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Sample index within the dataset or generated set.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    FdScale,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Break an invariant on purpose to exercise the report.
    #[arg(long = "inject-fault", value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    /// One weight set reused by every stage instead of a per-stage bank.
    #[arg(long)]
    shared: bool,
}

impl Common {
    fn overrides(&self, out_is_dir: bool) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: Option<String>| {
            if let Some(x) = val {
                v.push((k.to_string(), x));
            }
        };
        put("data.seed", self.seed.map(|x| x.to_string()));
        put("eval.jobs", self.jobs.map(|x| x.to_string()));
        if out_is_dir {
            put("eval.out", self.out.as_ref().map(|p| p.display().to_string()));
        }
        put("solver.name", self.solver.clone());
        put("solver.variant", self.variant.clone());
        put("dict.k_fd", self.kfd.map(|x| x.to_string()));
        put("solver.lambda", self.lambda.map(|x| x.to_string()));
        put("solver.rho", self.rho.map(|x| x.to_string()));
        put("solver.gamma", self.gamma.map(|x| x.to_string()));
        put("solver.iters", self.iters.map(|x| x.to_string()));
        put("solver.tol", self.tol.map(|x| x.to_string()));
        put("solver.prior", self.prior.clone());
        put("solver.weights", self.weights.as_ref().map(|p| p.display().to_string()));
        put("pilot.kind", self.pilot.clone());
        put("pilot.m_p", self.m_p.map(|x| x.to_string()));
        put("pilot.offset", self.offset.clone());
        put("eval.snrs", self.snrs.clone());
        put("data.samples", self.samples.map(|x| x.to_string()));
        put("data.paths", self.paths.map(|x| x.to_string()));
        put("data.on_grid", self.on_grid.then(|| "true".to_string()));
        put("data.path", self.data.as_ref().map(|p| p.display().to_string()));
        v
    }

    fn settings(&self, out_is_dir: bool) -> Result<Settings> {
        let mut flags = Vec::new();
        for pair in &self.set {
            let (k, val) = pair.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got '{pair}'"))?;
            flags.push((k.trim().to_string(), val.to_string()));
        }
        flags.extend(self.overrides(out_is_dir));
        let s = Settings::layered(self.config.as_deref(), &flags)?;
        println!("# effective configuration");
        print!("{}", s.echo());
        println!();
        Ok(s)
    }
}

/// Errors that should map to the configuration exit code.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: dda_core::Error) -> anyhow::Error {
    match e {
        dda_core::Error::Config(m) => ConfigError(m).into(),
        other => other.into(),
    }
}

fn offsets(s: &Settings, k: usize) -> Result<Vec<usize>> {
    let raw = s.raw("pilot.offset").map_err(config_err)?;
    if raw == "all" {
        return Ok((0..k).collect());
    }
    let o: usize = raw.parse().map_err(|_| ConfigError(format!("pilot.offset must be 'all' or an integer, got '{raw}'")))?;
    if o >= k {
        return Err(ConfigError(format!("pilot.offset {o} out of range 0..{k}")).into());
    }
    Ok(vec![o])
}

fn fmt_record(r: &ResultRecord) -> String {
    let offset = r.offset.map_or("mean".to_string(), |o| o.to_string());
    format!(
        "sample {:>3}  offset {:>4}  snr {:>5}  nmse {:>9.3} dB  iters {:>4}  {:.3} s",
        r.sample_id, offset, r.snr_db, r.nmse_db, r.iters, r.wall_s
    )
}

fn load_sample(s: &Settings, system: &SystemConfig, index: usize) -> Result<dda_core::channel_sim::ChannelWindow> {
    if let Some(path) = s.get_path("data.path")? {
        let ds = read_dataset(&path)?;
        let n = ds.samples.len();
        return ds.samples.into_iter().nth(index).with_context(|| format!("{} holds {n} samples", path.display()));
    }
    let seed: u64 = s.get("data.seed")?;
    let paths = sample_paths(sample_seed(seed, index), s.get("data.paths")?, &scenario_from_settings(s)?, system)?;
    Ok(synthesize_window(&paths, system)?)
}

fn cmd_gen_data(c: &Common) -> Result<u8> {
    let s = c.settings(false)?;
    let system = system_from_settings(&s).map_err(config_err)?;
    let seed: u64 = s.get("data.seed")?;
    let n: usize = s.get("data.samples")?;
    let paths: usize = s.get("data.paths")?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("dataset.ddads"));
    let ds = generate(&system, n, paths, &scenario_from_settings(&s)?, seed)?;
    write_dataset(&out, &ds)?;
    let (n_rx, n_f, t_w) = system.window_shape();
    println!("wrote {n} samples ({n_rx} x {n_f} x {t_w}, seed {seed}) to {}", out.display());
    Ok(0)
}

fn cmd_run(a: &RunArgs) -> Result<u8> {
    let s = a.common.settings(true)?;
    let exp = ExperimentConfig::from_settings(&s).map_err(config_err)?;
    let k = BlockLayout::new(exp.system.n_f, exp.m_p)?.k;
    let offs = offsets(&s, k)?;
    let truth = load_sample(&s, &exp.system, a.sample)?;
    let dict = build_dictionaries(&truth.config, 1, exp.k_fd)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for &snr in &exp.snrs {
        let ctx = EvalContext { pilot: exp.pilot, m_p: exp.m_p, snr_db: snr, seed: exp.seed };
        let mut recs = Vec::new();
        for &o in &offs {
            match evaluate_offset(a.sample, &truth, &exp.solver, &dict, &ctx, o) {
                Ok(r) => {
                    println!("{}", fmt_record(&r));
                    recs.push(r);
                }
                Err(e) => {
                    failed += 1;
                    eprintln!("offset {o} snr {snr}: {e}");
                }
            }
        }
        if let Some(agg) = aggregate(&recs) {
            println!("{}", fmt_record(&agg));
        }
        rows.extend(recs);
    }
    if a.common.out.is_some() {
        let path = exp.out.join("run.csv");
        write_results(&path, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn cmd_sweep(c: &Common) -> Result<u8> {
    let s = c.settings(true)?;
    let exp = ExperimentConfig::from_settings(&s).map_err(config_err)?;
    std::fs::create_dir_all(&exp.out).with_context(|| format!("creating {}", exp.out.display()))?;
    std::fs::write(exp.out.join("config.toml"), s.echo())?;
    let out = run_sweep(&exp).map_err(config_err)?;
    println!("{:<8} {:<8} {:<9} {:>3} {:>6} {:>12} {:>5}", "solver", "pilot", "variant", "kfd", "snr", "nmse_db", "rows");
    for e in &out.entries {
        println!(
            "{:<8} {:<8} {:<9} {:>3} {:>6} {:>12.3} {:>5}",
            e.solver, e.pilot, e.variant, e.kfd, e.snr_db, e.mean_nmse_db, e.rows
        );
    }
    for (key, err) in &out.failures {
        eprintln!("task {key} failed: {err}");
    }
    println!(
        "{} tasks: {} run, {} resumed, {} failed; results in {}",
        out.total_tasks,
        out.completed,
        out.resumed,
        out.failures.len(),
        out.csv.display()
    );
    Ok(out.exit_code() as u8)
}

fn cmd_tune(c: &Common) -> Result<u8> {
    let s = c.settings(true)?;
    let exp = ExperimentConfig::from_settings(&s).map_err(config_err)?;
    let grid = tune_grid_from_settings(&s).map_err(config_err)?;
    let k = BlockLayout::new(exp.system.n_f, exp.m_p)?.k;
    let offs = offsets(&s, k)?;
    let n: usize = match s.get_path("data.path")? {
        Some(p) => read_dataset(&p)?.samples.len().min(s.get("data.samples")?),
        None => s.get("data.samples")?,
    };
    let dict = build_dictionaries(&exp.system, 1, exp.k_fd)?;
    let layout = BlockLayout::new(exp.system.n_f, exp.m_p)?;
    let mut dev = Vec::new();
    for i in 0..n {
        let truth = load_sample(&s, &exp.system, i)?;
        for &snr in &exp.snrs {
            for &o in &offs {
                let sched = schedule(exp.pilot, &layout, exp.system.t_w, o)?;
                let obs = observe(&truth, &sched, snr, noise_seed(exp.seed, i, o, snr))?;
                dev.push(DevSample { truth: truth.clone(), obs });
            }
        }
    }
    let r = tune_hyperparams(&dev, &dict, &exp.solver, &grid).map_err(config_err)?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
    let mut table = String::from("lambda,rho,gamma,iterations,mean_nmse_db\n");
    for p in &r.points {
        let line = format!("{},{},{},{},{}", p.lambda, opt(p.rho), opt(p.gamma), p.iterations, p.mean_nmse_db);
        println!("{line}");
        table.push_str(&line);
        table.push('\n');
    }
    let b = r.best;
    println!(
        "best: lambda {} rho {} gamma {} iterations {} -> {:.3} dB over {} observations",
        b.lambda,
        opt(b.rho),
        opt(b.gamma),
        b.iterations,
        b.mean_nmse_db,
        dev.len()
    );
    if c.out.is_some() {
        std::fs::create_dir_all(&exp.out)?;
        let path = exp.out.join("tune.csv");
        std::fs::write(&path, table)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_pilots(c: &Common) -> Result<u8> {
    let s = c.settings(false)?;
    let system = system_from_settings(&s).map_err(config_err)?;
    let m_p: usize = s.get("pilot.m_p")?;
    let layout = BlockLayout::new(system.n_f, m_p).map_err(config_err)?;
    let kinds = match s.raw("pilot.kind")? {
        "all" => vec![PilotKind::Standard, PilotKind::Mcr],
        k => vec![k.parse::<PilotKind>().map_err(config_err)?],
    };
    let offs = offsets(&s, layout.k)?;
    for kind in kinds {
        let all = enumerate_offsets(kind, &layout, system.t_w)?;
        println!("{kind}: K={} m_p={m_p} t_w={} order {:?}", layout.k, system.t_w, all[0].order);
        for sched in all.iter().filter(|sc| offs.contains(&sc.offset)) {
            let blocks: Vec<String> = (0..system.t_w).map(|t| sched.block_at(t).to_string()).collect();
            println!("  offset {:>3}  blocks [{}]  covering radius {:.3}", sched.offset, blocks.join(" "), covering_radius(sched));
        }
    }
    Ok(0)
}

fn cmd_verify(a: &VerifyArgs) -> Result<u8> {
    let s = a.common.settings(false)?;
    let opts = VerifyOptions {
        system: system_from_settings(&s).map_err(config_err)?,
        m_p: s.get("pilot.m_p")?,
        seed: s.get("data.seed")?,
        fault: a.inject_fault.map(|f| match f {
            FaultArg::FdScale => Fault::FdScale(1.01),
        }),
    };
    BlockLayout::new(opts.system.n_f, opts.m_p).map_err(config_err)?;
    let report = run_verify(&opts);
    println!("{report}");
    Ok(if report.passed() { 0 } else { EXIT_PARTIAL })
}

fn cmd_weights_init(a: &WeightsArgs) -> Result<u8> {
    let s = a.common.settings(false)?;
    let mode: TemporalMode = s.get::<String>("solver.variant")?.parse().map_err(config_err)?;
    let n_iter: usize = s.get("solver.n_iter")?;
    let seed: u64 = s.get("data.seed")?;
    let mut spec = DenoiserSpec { hidden: a.hidden, ..DenoiserSpec::for_domain(mode.domain()) };
    if mode == TemporalMode::Time2d {
        spec.kernel.2 = 1;
    }
    if a.hidden == 0 {
        bail!(ConfigError("--hidden must be at least 1".into()));
    }
    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("weights.ddaw"));
    let bank = DenoiserBank::random(seed, &spec, n_iter)?;
    if a.shared {
        save_weights(&bank.init, &out)?;
    } else {
        save_bank(&bank, &out)?;
    }
    println!(
        "wrote {} denoiser weights for {mode} (hidden {}, kernel {:?}, seed {seed}) to {}",
        if a.shared { "shared".to_string() } else { format!("{} stage", n_iter + 1) },
        spec.hidden,
        spec.kernel,
        out.display()
    );
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Tune(c) => cmd_tune(c),
        Command::Pilots(c) => cmd_pilots(c),
        Command::Verify(a) => cmd_verify(a),
        Command::WeightsInit(a) => cmd_weights_init(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<dda_core::Error>(), Some(dda_core::Error::Config(_)));
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_PARTIAL })
        }
    }
}
