//! Frequency-hopping pilot schedules.
//!
//! The band is cut into `k` aligned contiguous blocks of `m_p` subcarriers
//! (block `b` covers subcarriers `b·m_p .. (b+1)·m_p`, 0-based). A schedule
//! observes one block per snapshot; the block at snapshot `t` is
//! `order[(offset + t) mod k]`.
//!
//! Distances on the snapshot × subcarrier grid use the normalized Chebyshev
//! metric `max(|Δt|/t_w, |Δf|/n_f)`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array3};

use crate::channel_sim::ChannelWindow;
use crate::{Error, Result, C64};

/// Pattern family of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PilotKind {
    /// Block index advances by one per snapshot.
    Standard,
    /// Minimum covering radius ordering.
    Mcr,
    /// Any other permutation (e.g. parsed from text).
    Custom,
}

impl PilotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PilotKind::Standard => "standard",
            PilotKind::Mcr => "mcr",
            PilotKind::Custom => "custom",
        }
    }
}

impl fmt::Display for PilotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PilotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PilotKind::Standard),
            "mcr" => Ok(PilotKind::Mcr),
            _ => Err(Error::Config(format!("unknown pilot pattern '{s}' (expected standard|mcr)"))),
        }
    }
}

/// Partition of the band into `k` blocks of `m_p` subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub k: usize,
    pub m_p: usize,
}

impl BlockLayout {
    pub fn new(n_f: usize, m_p: usize) -> Result<Self> {
        if m_p == 0 || n_f == 0 || n_f % m_p != 0 {
            return Err(Error::Config(format!("block size {m_p} does not partition {n_f} subcarriers")));
        }
        Ok(BlockLayout { k: n_f / m_p, m_p })
    }

    pub fn n_f(&self) -> usize {
        self.k * self.m_p
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotSchedule {
    pub kind: PilotKind,
    pub k: usize,
    pub m_p: usize,
    /// Permutation of `0..k`: block observed at hop step `s`.
    pub order: Vec<usize>,
    /// Starting position in the cycle, `0..k`.
    pub offset: usize,
    pub t_w: usize,
}

impl PilotSchedule {
    pub fn new(kind: PilotKind, layout: &BlockLayout, order: Vec<usize>, t_w: usize, offset: usize) -> Result<Self> {
        let k = layout.k;
        if offset >= k {
            return Err(Error::InvalidArgument(format!("offset {offset} out of range 0..{k}")));
        }
        if t_w == 0 {
            return Err(Error::InvalidArgument("window length must be >= 1".into()));
        }
        let mut seen = vec![false; k];
        if order.len() != k || order.iter().any(|&b| b >= k || std::mem::replace(&mut seen[b], true)) {
            return Err(Error::InvalidArgument(format!("order {order:?} is not a permutation of 0..{k}")));
        }
        Ok(PilotSchedule { kind, k, m_p: layout.m_p, order, offset, t_w })
    }

    pub fn n_f(&self) -> usize {
        self.k * self.m_p
    }

    /// Block observed at snapshot `t`.
    pub fn block_at(&self, t: usize) -> usize {
        self.order[(self.offset + t) % self.k]
    }

    /// Observed subcarriers (0-based) at snapshot `t`.
    pub fn omega(&self, t: usize) -> Range<usize> {
        let b = self.block_at(t);
        b * self.m_p..(b + 1) * self.m_p
    }

    pub fn omegas(&self) -> Vec<Range<usize>> {
        (0..self.t_w).map(|t| self.omega(t)).collect()
    }

    /// Plain-text form: `k m_p t_w offset order[0] .. order[k-1]`.
    pub fn to_text(&self) -> String {
        let mut parts = vec![self.k.to_string(), self.m_p.to_string(), self.t_w.to_string(), self.offset.to_string()];
        parts.extend(self.order.iter().map(|b| b.to_string()));
        parts.join(" ")
    }

    /// Parses [`PilotSchedule::to_text`] output. The kind is recovered by
    /// comparing the order against the standard and MCR constructions.
    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|tok| tok.parse::<usize>().map_err(|e| Error::Config(format!("bad schedule token '{tok}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() < 4 {
            return Err(Error::Config("schedule text needs k, m_p, t_w, offset and the order".into()));
        }
        let (k, m_p, t_w, offset) = (values[0], values[1], values[2], values[3]);
        let order = values[4..].to_vec();
        if k == 0 || order.len() != k {
            return Err(Error::Config(format!("schedule declares k = {k} but lists {} blocks", order.len())));
        }
        let layout = BlockLayout { k, m_p };
        let kind = if order.iter().enumerate().all(|(i, &b)| i == b) {
            PilotKind::Standard
        } else if order == mcr_order(k, t_w) {
            PilotKind::Mcr
        } else {
            PilotKind::Custom
        };
        PilotSchedule::new(kind, &layout, order, t_w, offset)
    }
}

/// Cyclic hopping with the identity order.
pub fn standard_schedule(layout: &BlockLayout, t_w: usize, offset: usize) -> Result<PilotSchedule> {
    PilotSchedule::new(PilotKind::Standard, layout, (0..layout.k).collect(), t_w, offset)
}

/// Hop order built by greedy farthest-point placement.
///
/// Step 0 takes block 0. Each following step takes the unused block that
/// maximizes the minimum distance `max(Δs/t_w, Δb/k)` to the points already
/// placed, where `Δs` is the cyclic step distance over the `k`-step cycle.
/// Ties go to the smallest block index.
pub fn mcr_order(k: usize, t_w: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let t_w = t_w.max(1) as f64;
    let mut order = vec![0usize];
    let mut used = vec![false; k];
    used[0] = true;
    for step in 1..k {
        let mut best: Option<(usize, f64)> = None;
        for b in (0..k).filter(|&b| !used[b]) {
            let score = order
                .iter()
                .enumerate()
                .map(|(s_prev, &b_prev)| {
                    let ds = step - s_prev;
                    let ds = ds.min(k - ds) as f64 / t_w;
                    let db = b.abs_diff(b_prev) as f64 / k as f64;
                    ds.max(db)
                })
                .fold(f64::INFINITY, f64::min);
            // strict comparison keeps the smallest index on ties
            if best.is_none_or(|(_, s)| score > s + 1e-12) {
                best = Some((b, score));
            }
        }
        let (b, _) = best.expect("an unused block remains");
        used[b] = true;
        order.push(b);
    }
    order
}

/// Minimum-covering-radius schedule: the [`mcr_order`] permutation started at `offset`.
pub fn mcr_schedule(layout: &BlockLayout, t_w: usize, offset: usize) -> Result<PilotSchedule> {
    PilotSchedule::new(PilotKind::Mcr, layout, mcr_order(layout.k, t_w), t_w, offset)
}

/// Builds a schedule of the given family.
pub fn schedule(kind: PilotKind, layout: &BlockLayout, t_w: usize, offset: usize) -> Result<PilotSchedule> {
    match kind {
        PilotKind::Standard => standard_schedule(layout, t_w, offset),
        PilotKind::Mcr => mcr_schedule(layout, t_w, offset),
        PilotKind::Custom => Err(Error::InvalidArgument("custom schedules need an explicit order".into())),
    }
}

/// All `k` starting offsets of one pattern.
pub fn enumerate_offsets(kind: PilotKind, layout: &BlockLayout, t_w: usize) -> Result<Vec<PilotSchedule>> {
    (0..layout.k).map(|o| schedule(kind, layout, t_w, o)).collect()
}

/// Largest normalized Chebyshev distance from any snapshot × subcarrier
/// grid point to the nearest observed pilot sample.
pub fn covering_radius(schedule: &PilotSchedule) -> f64 {
    covering_radius_of(&schedule.omegas(), schedule.n_f())
}

/// [`covering_radius`] for an arbitrary list of observed contiguous ranges.
pub fn covering_radius_of(omegas: &[Range<usize>], n_f: usize) -> f64 {
    let t_w = omegas.len();
    let mut radius: f64 = 0.0;
    for t in 0..t_w {
        for f in 0..n_f {
            let nearest = omegas
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_empty())
                .map(|(tp, w)| {
                    let df = if f < w.start {
                        w.start - f
                    } else if f >= w.end {
                        f - (w.end - 1)
                    } else {
                        0
                    };
                    (t.abs_diff(tp) as f64 / t_w as f64).max(df as f64 / n_f as f64)
                })
                .fold(f64::INFINITY, f64::min);
            radius = radius.max(nearest);
        }
    }
    radius
}

/// Extracts the observed columns of every snapshot: `[n_rx, m_p, t_w]`.
pub fn apply_mask(h: &ChannelWindow, schedule: &PilotSchedule) -> Result<Array3<C64>> {
    let (n_rx, n_f, t_w) = h.data.dim();
    if n_f != schedule.n_f() || t_w != schedule.t_w {
        return Err(Error::Shape(format!(
            "schedule covers {} subcarriers × {} snapshots, window is {n_f} × {t_w}",
            schedule.n_f(),
            schedule.t_w
        )));
    }
    let mut out = Array3::zeros((n_rx, schedule.m_p, t_w));
    for t in 0..t_w {
        let w = schedule.omega(t);
        out.slice_mut(s![.., .., t]).assign(&h.data.slice(s![.., w, t]));
    }
    Ok(out)
}
