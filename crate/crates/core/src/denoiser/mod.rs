//! Residual prior `D(U) = U − s·C₂(Ψ(C₁(U/s)))` (inference only).
//!
//! `U` is packed into two real channels (real, imaginary) over
//! `[angle][delay][time|doppler]`. `s` is the global complex RMS of `U`,
//! floored at `1e−12`. `Ψ` applies a per-channel cubic B-spline with shared
//! knots.

pub mod bspline;
pub mod conv;
pub mod weights_io;

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand_distr::{Distribution, Normal};

use crate::rng::{self, Purpose};
use crate::transforms::{DdaTensor, Domain};
use crate::{Error, Result, C64};

pub use bspline::{bspline_eval, KnotGrid};
pub use conv::{Conv3d, TimePadding};
use weights_io::{ArrayData, ArrayMap, NamedArray};

/// Floor on the normalization scale.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Architecture of one denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserSpec {
    pub hidden: usize,
    /// `(angle, delay, time)` extents.
    pub kernel: (usize, usize, usize),
    pub knots: KnotGrid,
    pub padding: TimePadding,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec { hidden: 16, kernel: (3, 11, 3), knots: KnotGrid::default(), padding: TimePadding::Circular }
    }
}

impl DenoiserSpec {
    /// Padding that matches a tensor domain: circular for Doppler, zero for time.
    pub fn for_domain(domain: Domain) -> Self {
        let padding = match domain {
            Domain::Doppler => TimePadding::Circular,
            Domain::Time => TimePadding::Zero,
        };
        DenoiserSpec { padding, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserWeights {
    pub conv1: Conv3d,
    /// `[hidden][n_knots + 2]`.
    pub spline: Array2<f64>,
    pub knots: KnotGrid,
    pub conv2: Conv3d,
    pub padding: TimePadding,
}

impl DenoiserWeights {
    pub fn hidden(&self) -> usize {
        self.conv1.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.conv1.validate("conv1")?;
        self.conv2.validate("conv2")?;
        let h = self.hidden();
        if self.conv1.in_channels() != 2 || self.conv2.out_channels() != 2 || self.conv2.in_channels() != h {
            return Err(Error::Shape(format!(
                "conv chain 2→{}→{}→{} does not match 2→h→2",
                self.conv1.out_channels(),
                self.conv2.in_channels(),
                self.conv2.out_channels()
            )));
        }
        if self.spline.dim() != (h, self.knots.n_coeffs()) {
            return Err(Error::Shape(format!(
                "spline coefficients {:?}, expected ({h}, {})",
                self.spline.dim(),
                self.knots.n_coeffs()
            )));
        }
        if self.spline.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spline coefficients".into()));
        }
        Ok(())
    }

    /// Sets the second convolution to zero, making the denoiser the identity.
    pub fn zero_conv2(mut self) -> Self {
        self.conv2.weight.fill(0.0);
        self.conv2.bias.fill(0.0);
        self
    }
}

/// Variance-scaled random weights with identity splines and zero biases.
pub fn random_weights(seed: u64, spec: &DenoiserSpec) -> Result<DenoiserWeights> {
    let (ka, kd, kt) = spec.kernel;
    let mut r = rng::stream(seed, Purpose::Weights, 0);
    let mut draw = |out: usize, inp: usize| -> Result<Conv3d> {
        let fan_in = (inp * ka * kd * kt) as f64;
        let dist = Normal::new(0.0, (1.0 / fan_in).sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut c = Conv3d::zeros(out, inp, spec.kernel);
        c.weight.mapv_inplace(|_| dist.sample(&mut r));
        Ok(c)
    };
    let conv1 = draw(spec.hidden, 2)?;
    let conv2 = draw(2, spec.hidden)?;
    let id = spec.knots.identity_coeffs();
    let spline = Array2::from_shape_fn((spec.hidden, spec.knots.n_coeffs()), |(_, j)| id[j]);
    let w = DenoiserWeights { conv1, spline, knots: spec.knots, conv2, padding: spec.padding };
    w.validate()?;
    Ok(w)
}

fn rms(u: &Array3<C64>) -> f64 {
    let n = u.len().max(1) as f64;
    (u.iter().map(|v| v.norm_sqr()).sum::<f64>() / n).sqrt().max(SCALE_FLOOR)
}

fn pack(u: &Array3<C64>, scale: f64) -> Array4<f64> {
    let (a, d, t) = u.dim();
    let mut out = Array4::zeros((2, a, d, t));
    for ((i, j, k), v) in u.indexed_iter() {
        out[[0, i, j, k]] = v.re / scale;
        out[[1, i, j, k]] = v.im / scale;
    }
    out
}

fn spline_act(h: &mut Array4<f64>, w: &DenoiserWeights) {
    for (c, mut chan) in h.axis_iter_mut(Axis(0)).enumerate() {
        let coeffs = w.spline.row(c);
        let coeffs = coeffs.as_slice().expect("row of standard-layout array");
        chan.mapv_inplace(|x| bspline_eval(x, coeffs, &w.knots));
    }
}

/// The subtracted branch `s·C₂(Ψ(C₁(U/s)))`.
pub fn correction(u: &Array3<C64>, w: &DenoiserWeights) -> Result<Array3<C64>> {
    let scale = rms(u);
    let mut h = w.conv1.forward(pack(u, scale).view(), w.padding)?;
    spline_act(&mut h, w);
    let o = w.conv2.forward(h.view(), w.padding)?;
    let mut out = Array3::zeros(u.dim());
    for ((i, j, k), v) in out.indexed_iter_mut() {
        *v = C64::new(o[[0, i, j, k]], o[[1, i, j, k]]) * scale;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("denoiser output".into()));
    }
    Ok(out)
}

fn check_padding(u: &DdaTensor, w: &DenoiserWeights) -> Result<()> {
    let ok = matches!(
        (u.domain, w.padding),
        (Domain::Doppler, TimePadding::Circular) | (Domain::Time, TimePadding::Zero)
    );
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "{:?} time padding is not valid for a {}-domain tensor",
            w.padding, u.domain
        )));
    }
    Ok(())
}

/// `D(U)` on the whole tensor.
pub fn apply_denoiser(u: &DdaTensor, w: &DenoiserWeights) -> Result<DdaTensor> {
    w.validate()?;
    check_padding(u, w)?;
    let corr = correction(&u.data, w)?;
    Ok(DdaTensor { data: &u.data - &corr, domain: u.domain })
}

/// `D` applied to each time slice on its own. Requires a time-domain input and
/// a temporal kernel extent of 1.
pub fn apply_denoiser_per_slice(u: &DdaTensor, w: &DenoiserWeights) -> Result<DdaTensor> {
    w.validate()?;
    u.expect_domain(Domain::Time)?;
    if w.conv1.kernel().2 != 1 || w.conv2.kernel().2 != 1 {
        return Err(Error::Shape("per-slice denoising needs a temporal kernel extent of 1".into()));
    }
    let mut out = u.data.clone();
    for t in 0..u.data.dim().2 {
        let slice = u.data.slice(s![.., .., t..t + 1]).to_owned();
        let corr = correction(&slice, w)?;
        out.slice_mut(s![.., .., t..t + 1]).zip_mut_with(&corr, |o, c| *o -= c);
    }
    Ok(DdaTensor { data: out, domain: Domain::Time })
}

fn to_arrays(w: &DenoiserWeights, prefix: &str, map: &mut ArrayMap) {
    let (ka, kd, kt) = w.conv1.kernel();
    let pad = match w.padding {
        TimePadding::Circular => 0,
        TimePadding::Zero => 1,
    };
    let meta = vec![w.hidden() as u32, ka as u32, kd as u32, kt as u32, w.knots.n_knots as u32, pad];
    map.insert(format!("{prefix}meta"), NamedArray::u32(vec![6], meta));
    map.insert(format!("{prefix}spline.range"), NamedArray::f64(vec![1], vec![w.knots.range]));
    for (name, conv) in [("conv1", &w.conv1), ("conv2", &w.conv2)] {
        let wt = conv.weight.as_standard_layout();
        map.insert(format!("{prefix}{name}.weight"), NamedArray::f64(conv.weight.shape().to_vec(), wt.iter().copied().collect()));
        map.insert(format!("{prefix}{name}.bias"), NamedArray::f64(vec![conv.bias.len()], conv.bias.clone()));
    }
    let sp = w.spline.as_standard_layout();
    map.insert(format!("{prefix}spline.coeffs"), NamedArray::f64(w.spline.shape().to_vec(), sp.iter().copied().collect()));
}

fn get<'a>(map: &'a ArrayMap, name: &str, path: &Path) -> Result<&'a NamedArray> {
    map.get(name).ok_or_else(|| Error::format(path, format!("missing array {name}")))
}

fn get_f64(map: &ArrayMap, name: &str, dims: &[usize], path: &Path) -> Result<Vec<f64>> {
    let a = get(map, name, path)?;
    if a.dims != dims {
        return Err(Error::format(path, format!("array {name} has dims {:?}, expected {dims:?}", a.dims)));
    }
    match &a.data {
        ArrayData::F64(v) => Ok(v.clone()),
        ArrayData::U32(_) => Err(Error::format(path, format!("array {name} should be f64"))),
    }
}

fn from_arrays(map: &ArrayMap, prefix: &str, path: &Path) -> Result<DenoiserWeights> {
    let meta = match &get(map, &format!("{prefix}meta"), path)?.data {
        ArrayData::U32(v) if v.len() == 6 => v.iter().map(|&x| x as usize).collect::<Vec<_>>(),
        _ => return Err(Error::format(path, format!("array {prefix}meta must be 6 u32 values"))),
    };
    let (h, ka, kd, kt, n_knots) = (meta[0], meta[1], meta[2], meta[3], meta[4]);
    let padding = match meta[5] {
        0 => TimePadding::Circular,
        1 => TimePadding::Zero,
        p => return Err(Error::format(path, format!("unknown padding code {p}"))),
    };
    let range = get_f64(map, &format!("{prefix}spline.range"), &[1], path)?[0];
    let knots = KnotGrid::new(n_knots, range).map_err(|e| Error::format(path, e.to_string()))?;
    let conv = |name: &str, out: usize, inp: usize| -> Result<Conv3d> {
        let dims = [out, inp, ka, kd, kt];
        let w = get_f64(map, &format!("{prefix}{name}.weight"), &dims, path)?;
        let bias = get_f64(map, &format!("{prefix}{name}.bias"), &[out], path)?;
        Ok(Conv3d { weight: ndarray::Array5::from_shape_vec((out, inp, ka, kd, kt), w).expect("dims checked"), bias })
    };
    let conv1 = conv("conv1", h, 2)?;
    let conv2 = conv("conv2", 2, h)?;
    let nc = knots.n_coeffs();
    let sp = get_f64(map, &format!("{prefix}spline.coeffs"), &[h, nc], path)?;
    let spline = Array2::from_shape_vec((h, nc), sp).expect("dims checked");
    let w = DenoiserWeights { conv1, spline, knots, conv2, padding };
    w.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(w)
}

const SINGLE: &str = "d0/";

/// FNV-1a hash of the serialized weights, for provenance records.
pub fn fingerprint(w: &DenoiserWeights) -> String {
    let mut map = ArrayMap::new();
    to_arrays(w, SINGLE, &mut map);
    let h = weights_io::encode(&map).iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    format!("{h:016x}")
}


pub fn save_weights(w: &DenoiserWeights, path: &Path) -> Result<()> {
    let mut map = ArrayMap::new();
    to_arrays(w, SINGLE, &mut map);
    weights_io::write_arrays(&map, path)
}

pub fn load_weights(path: &Path) -> Result<DenoiserWeights> {
    from_arrays(&weights_io::read_arrays(path)?, SINGLE, path)
}

/// Weights for a whole unfolded network: the initialization denoiser plus one
/// set per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserBank {
    pub init: DenoiserWeights,
    pub stages: Vec<DenoiserWeights>,
}

impl DenoiserBank {
    /// The same weights at every position.
    pub fn shared(w: DenoiserWeights, n_iter: usize) -> Self {
        DenoiserBank { init: w.clone(), stages: vec![w; n_iter] }
    }

    pub fn random(seed: u64, spec: &DenoiserSpec, n_iter: usize) -> Result<Self> {
        let init = random_weights(rng::derive_seed(seed, &[0]), spec)?;
        let stages =
            (0..n_iter).map(|i| random_weights(rng::derive_seed(seed, &[1 + i as u64]), spec)).collect::<Result<_>>()?;
        Ok(DenoiserBank { init, stages })
    }
}

pub fn save_bank(bank: &DenoiserBank, path: &Path) -> Result<()> {
    let mut map = ArrayMap::new();
    to_arrays(&bank.init, "init/", &mut map);
    for (i, w) in bank.stages.iter().enumerate() {
        to_arrays(w, &format!("stage{i}/"), &mut map);
    }
    weights_io::write_arrays(&map, path)
}

/// Loads a bank file, or a single-set file expanded to `n_iter` stages.
pub fn load_bank(path: &Path, n_iter: usize) -> Result<DenoiserBank> {
    let map = weights_io::read_arrays(path)?;
    if map.contains_key(&format!("{SINGLE}meta")) {
        return Ok(DenoiserBank::shared(from_arrays(&map, SINGLE, path)?, n_iter));
    }
    let init = from_arrays(&map, "init/", path)?;
    let stages = (0..n_iter).map(|i| from_arrays(&map, &format!("stage{i}/"), path)).collect::<Result<Vec<_>>>()?;
    if map.contains_key(&format!("stage{n_iter}/meta")) {
        return Err(Error::format(path, format!("file holds more than {n_iter} stages")));
    }
    Ok(DenoiserBank { init, stages })
}
