//! Flat dotted-key configuration.
//!
//! Values are layered as defaults < TOML file < environment (`DDA_` prefix,
//! `__` for `.`, e.g. `DDA_SOLVER__LAMBDA=0.1`) < explicit overrides. Every
//! key must be known; the merged result can be echoed in TOML form and read
//! back to reproduce a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::channel_sim::{Scenario, SystemConfig};
use crate::dc::DEFAULT_NOISE_FLOOR;
use crate::denoiser::load_bank;
use crate::eval::{ExperimentConfig, SampleSource};
use crate::solvers::tune::TuneGrid;
use crate::solvers::{AdmmParams, FistaParams, PriorOperator, SolverConfig, TemporalMode, UnfoldedParams};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "DDA_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

fn default_pairs() -> Vec<(&'static str, String)> {
    let sys = SystemConfig::default();
    let sc = Scenario::default();
    let admm = AdmmParams::default();
    let grid = TuneGrid::default();
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    vec![
        ("system.n_v", sys.n_v.to_string()),
        ("system.n_h", sys.n_h.to_string()),
        ("system.n_pol", sys.n_pol.to_string()),
        ("system.n_f", sys.n_f.to_string()),
        ("system.delta_f", sys.delta_f.to_string()),
        ("system.t_w", sys.t_w.to_string()),
        ("system.delta_t", sys.delta_t.to_string()),
        ("system.carrier_freq", sys.carrier_freq.to_string()),
        ("pilot.kind", "mcr".into()),
        ("pilot.m_p", "24".into()),
        ("pilot.offset", "all".into()),
        ("dict.k_fd", "3".into()),
        ("solver.name", "admm".into()),
        ("solver.variant", admm.mode.to_string()),
        ("solver.lambda", admm.lambda.to_string()),
        ("solver.rho", admm.rho.to_string()),
        ("solver.gamma", admm.gamma.to_string()),
        ("solver.iters", admm.max_iter.to_string()),
        ("solver.tol", admm.tol.to_string()),
        ("solver.noise_floor", DEFAULT_NOISE_FLOOR.to_string()),
        ("solver.prior", "soft".into()),
        ("solver.weights", String::new()),
        ("solver.n_iter", "8".into()),
        ("data.samples", "10".into()),
        ("data.paths", "6".into()),
        ("data.seed", "0".into()),
        ("data.on_grid", sc.on_grid.to_string()),
        ("data.delay_frac", sc.delay_frac.to_string()),
        ("data.nu_max", sc.nu_max.to_string()),
        ("data.power_decay_db", sc.power_decay_db.to_string()),
        ("data.path", String::new()),
        ("eval.snrs", "0,5,10,15,20".into()),
        ("eval.jobs", "0".into()),
        ("eval.out", "out".into()),
        ("tune.lambdas", join(&grid.lambdas)),
        ("tune.rhos", join(&grid.rhos)),
        ("tune.gammas", join(&grid.gammas)),
        ("tune.iterations", grid.iterations.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
    ]
}

/// Merged key/value settings with the layer each value came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { values: default_pairs().into_iter().map(|(k, v)| (k.to_string(), (v, Source::Default))).collect() }
    }
}

fn scalar_to_string(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            toml::Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|i| scalar_to_string(i).ok_or_else(|| Error::Config(format!("{key}: arrays may only hold scalars"))))
                    .collect::<Result<Vec<_>>>()?;
                out.push((key, parts.join(",")));
            }
            other => {
                let v = scalar_to_string(other).ok_or_else(|| Error::Config(format!("{key}: unsupported value")))?;
                out.push((key, v));
            }
        }
    }
    Ok(())
}

impl Settings {
    /// Sets a known key.
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.trim().to_string(), source);
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str, source: Source) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got '{pair}'")))?;
        self.set(k.trim(), v, source)
    }

    pub fn merge_toml_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs)?;
        for (k, v) in pairs {
            self.set(&k, &v, Source::File)?;
        }
        Ok(())
    }

    pub fn merge_toml_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies every `DDA_*` variable in `vars`.
    pub fn merge_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                let key = rest.to_lowercase().replace("__", ".");
                self.set(&key, &value, Source::Env).map_err(|_| Error::Config(format!("environment variable {name} names no configuration key")))?;
            }
        }
        Ok(())
    }

    /// Defaults, then `file`, then the process environment, then `overrides`.
    pub fn layered(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(p) = file {
            s.merge_toml_file(p)?;
        }
        s.merge_env(std::env::vars())?;
        for (k, v) in overrides {
            s.set(k, v, Source::Flag)?;
        }
        Ok(s)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values.get(key).map(|(v, _)| v.as_str()).ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{raw}'")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'"))))
            .collect()
    }

    /// Empty values read as `None`.
    pub fn get_path(&self, key: &str) -> Result<Option<PathBuf>> {
        let raw = self.raw(key)?;
        Ok((!raw.is_empty()).then(|| PathBuf::from(raw)))
    }

    /// The merged settings as TOML, annotated with the layer of each value.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, (value, source)) in &self.values {
            let (sec, name) = key.split_once('.').unwrap_or(("", key));
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec;
            }
            let rendered = if value.parse::<f64>().is_ok_and(f64::is_finite) || value == "true" || value == "false" {
                value.clone()
            } else {
                toml::Value::String(value.clone()).to_string()
            };
            out.push_str(&format!("{name} = {rendered}  # {source}\n"));
        }
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Parses an SNR in dB; `inf` means noiseless.
pub fn parse_snr(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" | "Inf" | "noiseless" => Ok(f64::INFINITY),
        t => t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Config(format!("bad SNR '{t}'"))),
    }
}

pub fn system_from_settings(s: &Settings) -> Result<SystemConfig> {
    let c = SystemConfig {
        n_v: s.get("system.n_v")?,
        n_h: s.get("system.n_h")?,
        n_pol: s.get("system.n_pol")?,
        n_f: s.get("system.n_f")?,
        delta_f: s.get("system.delta_f")?,
        t_w: s.get("system.t_w")?,
        delta_t: s.get("system.delta_t")?,
        carrier_freq: s.get("system.carrier_freq")?,
    };
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(c)
}

pub fn scenario_from_settings(s: &Settings) -> Result<Scenario> {
    Ok(Scenario {
        delay_frac: s.get("data.delay_frac")?,
        nu_max: s.get("data.nu_max")?,
        power_decay_db: s.get("data.power_decay_db")?,
        on_grid: s.get("data.on_grid")?,
        grid_k_fd: s.get("dict.k_fd")?,
    })
}

pub fn tune_grid_from_settings(s: &Settings) -> Result<TuneGrid> {
    Ok(TuneGrid {
        lambdas: s.get_list("tune.lambdas")?,
        rhos: s.get_list("tune.rhos")?,
        gammas: s.get_list("tune.gammas")?,
        iterations: s.get_list("tune.iterations")?,
    })
}

pub fn snrs_from_settings(s: &Settings) -> Result<Vec<f64>> {
    s.raw("eval.snrs")?.split(',').filter(|t| !t.trim().is_empty()).map(parse_snr).collect()
}

pub fn solver_from_settings(s: &Settings) -> Result<SolverConfig> {
    let mode: TemporalMode = s.get::<String>("solver.variant")?.parse()?;
    let lambda: f64 = s.get("solver.lambda")?;
    let rho: f64 = s.get("solver.rho")?;
    let gamma: f64 = s.get("solver.gamma")?;
    let max_iter: usize = s.get("solver.iters")?;
    let tol: f64 = s.get("solver.tol")?;
    let noise_floor: f64 = s.get("solver.noise_floor")?;
    if !(noise_floor > 0.0) {
        return Err(Error::Config(format!("solver.noise_floor must be positive, got {noise_floor}")));
    }
    let name = s.get::<String>("solver.name")?;
    Ok(match name.as_str() {
        "ls" => SolverConfig::Ls,
        "fista" => SolverConfig::Fista(FistaParams { lambda, max_iter, tol, noise_floor, mode }),
        "admm" => SolverConfig::Admm(AdmmParams { lambda, rho, gamma, max_iter, tol, noise_floor, mode }),
        "unfolded" => {
            let n_iter: usize = s.get("solver.n_iter")?;
            if n_iter == 0 {
                return Err(Error::Config("solver.n_iter must be at least 1".into()));
            }
            let prior = s.get::<String>("solver.prior")?;
            let mut p = match prior.as_str() {
                "soft" => UnfoldedParams::uniform(PriorOperator::SoftThreshold { lambda }, n_iter, rho, gamma, mode),
                "identity" => UnfoldedParams::uniform(PriorOperator::Identity, n_iter, rho, gamma, mode),
                "denoiser" => {
                    let path = s
                        .get_path("solver.weights")?
                        .ok_or_else(|| Error::Config("solver.prior=denoiser needs solver.weights".into()))?;
                    let bank = load_bank(&path, n_iter)?;
                    let mut p = UnfoldedParams::uniform(PriorOperator::Identity, 0, rho, gamma, mode);
                    p.init_prior = PriorOperator::Denoiser(Arc::new(bank.init));
                    p.stage_priors = bank.stages.into_iter().map(|w| PriorOperator::Denoiser(Arc::new(w))).collect();
                    p
                }
                other => return Err(Error::Config(format!("unknown prior '{other}' (expected soft|identity|denoiser)"))),
            };
            p.noise_floor = noise_floor;
            SolverConfig::Unfolded(p)
        }
        other => return Err(Error::Config(format!("unknown solver '{other}' (expected ls|fista|admm|unfolded)"))),
    })
}

impl ExperimentConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let source = match s.get_path("data.path")? {
            Some(p) => SampleSource::Dataset(p),
            None => SampleSource::Generated {
                n_samples: s.get("data.samples")?,
                n_paths: s.get("data.paths")?,
                scenario: scenario_from_settings(s)?,
            },
        };
        let cfg = ExperimentConfig {
            system: system_from_settings(s)?,
            pilot: s.get::<String>("pilot.kind")?.parse()?,
            m_p: s.get("pilot.m_p")?,
            k_fd: s.get("dict.k_fd")?,
            solver: solver_from_settings(s)?,
            snrs: snrs_from_settings(s)?,
            source,
            seed: s.get("data.seed")?,
            out: PathBuf::from(s.raw("eval.out")?),
            jobs: s.get("eval.jobs")?,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }
}
