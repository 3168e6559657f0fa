//! Channel datasets on disk.
//!
//! ```text
//! magic      b"DDACHDS\0"
//! version    u32 (= 1)
//! dtype      u32 (1 = complex64)
//! n_rx n_f t_w   u32 × 3
//! n_samples  u64
//! index      n_samples × u64 byte offsets of each sample
//! payload    per sample n_rx·n_f·t_w pairs of f32 (re, im), row-major
//! ```
//!
//! All integers are little-endian. A `<path>.meta` sidecar holds the system
//! configuration and the seeds as `key=value` lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::channel_sim::{sample_paths, synthesize_window, ChannelWindow, Scenario, SystemConfig};
use crate::rng::derive_seed;
use crate::{Error, Result, C64};

pub const MAGIC: &[u8; 8] = b"DDACHDS\0";
pub const VERSION: u32 = 1;
pub const DTYPE_COMPLEX64: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 12 + 8;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SystemConfig,
    pub samples: Vec<ChannelWindow>,
    pub meta: BTreeMap<String, String>,
}

/// Path of the metadata sidecar.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Seed of sample `index` in a generated set.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Synthesizes `n` windows of `n_paths` paths each.
pub fn generate(config: &SystemConfig, n: usize, n_paths: usize, scenario: &Scenario, seed: u64) -> Result<Dataset> {
    let mut meta = config_to_meta(config);
    meta.insert("seed".into(), seed.to_string());
    meta.insert("n_paths".into(), n_paths.to_string());
    meta.insert("scenario.delay_frac".into(), scenario.delay_frac.to_string());
    meta.insert("scenario.nu_max".into(), scenario.nu_max.to_string());
    meta.insert("scenario.power_decay_db".into(), scenario.power_decay_db.to_string());
    meta.insert("scenario.on_grid".into(), scenario.on_grid.to_string());
    meta.insert("scenario.grid_k_fd".into(), scenario.grid_k_fd.to_string());
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let s = sample_seed(seed, i);
        meta.insert(format!("sample.{i}.seed"), s.to_string());
        samples.push(synthesize_window(&sample_paths(s, n_paths, scenario, config)?, config)?);
    }
    Ok(Dataset { config: config.clone(), samples, meta })
}

fn config_to_meta(c: &SystemConfig) -> BTreeMap<String, String> {
    [
        ("system.n_v", c.n_v.to_string()),
        ("system.n_h", c.n_h.to_string()),
        ("system.n_pol", c.n_pol.to_string()),
        ("system.n_f", c.n_f.to_string()),
        ("system.delta_f", c.delta_f.to_string()),
        ("system.t_w", c.t_w.to_string()),
        ("system.delta_t", c.delta_t.to_string()),
        ("system.carrier_freq", c.carrier_freq.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn config_from_meta(meta: &BTreeMap<String, String>, path: &Path) -> Result<SystemConfig> {
    fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
        meta.get(key)
            .ok_or_else(|| Error::format(path, format!("missing {key}")))?
            .parse()
            .map_err(|_| Error::format(path, format!("bad value for {key}")))
    }
    let c = SystemConfig {
        n_v: get(meta, "system.n_v", path)?,
        n_h: get(meta, "system.n_h", path)?,
        n_pol: get(meta, "system.n_pol", path)?,
        n_f: get(meta, "system.n_f", path)?,
        delta_f: get(meta, "system.delta_f", path)?,
        t_w: get(meta, "system.t_w", path)?,
        delta_t: get(meta, "system.delta_t", path)?,
        carrier_freq: get(meta, "system.carrier_freq", path)?,
    };
    c.validate()?;
    Ok(c)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let cfg = &ds.config;
    let (n_rx, n_f, t_w) = cfg.window_shape();
    let per = n_rx * n_f * t_w * 8;
    let n = ds.samples.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * n + per * n);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&DTYPE_COMPLEX64.to_le_bytes());
    for d in [n_rx, n_f, t_w] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    let start = HEADER_LEN + 8 * n;
    for i in 0..n {
        buf.extend_from_slice(&((start + i * per) as u64).to_le_bytes());
    }
    for s in &ds.samples {
        if s.data.dim() != (n_rx, n_f, t_w) {
            return Err(Error::Shape(format!("sample {:?} does not match {:?}", s.data.dim(), (n_rx, n_f, t_w))));
        }
        for v in s.data.as_standard_layout().iter() {
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;
    let mut meta = ds.meta.clone();
    meta.extend(config_to_meta(cfg));
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let mp = meta_path(path);
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut meta = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format(&mp, format!("line {}: expected key=value", no + 1)))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let meta = read_meta(path)?;
    let config = config_from_meta(&meta, &meta_path(path))?;
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &buf[..8] != MAGIC {
        return Err(Error::format(path, "bad magic, not a channel dataset"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", u32_at(8))));
    }
    if u32_at(12) != DTYPE_COMPLEX64 {
        return Err(Error::format(path, format!("unsupported dtype {}", u32_at(12))));
    }
    let dims = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize);
    if dims != config.window_shape() {
        return Err(Error::format(path, format!("header dims {dims:?} disagree with sidecar {:?}", config.window_shape())));
    }
    let n = u64_at(28) as usize;
    let per = dims.0 * dims.1 * dims.2 * 8;
    if buf.len() < HEADER_LEN + 8 * n {
        return Err(Error::format(path, "truncated index"));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let off = u64_at(HEADER_LEN + 8 * i) as usize;
        let bytes = buf.get(off..off.saturating_add(per)).ok_or_else(|| Error::format(path, format!("truncated sample {i}")))?;
        let vals: Vec<C64> = bytes
            .chunks_exact(8)
            .map(|b| {
                let re = f32::from_le_bytes(b[..4].try_into().unwrap());
                let im = f32::from_le_bytes(b[4..].try_into().unwrap());
                C64::new(re as f64, im as f64)
            })
            .collect();
        let data = Array3::from_shape_vec(dims, vals).expect("length checked");
        samples.push(ChannelWindow::new(data, config.clone())?);
    }
    Ok(Dataset { config, samples, meta })
}
