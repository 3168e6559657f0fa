//! Real-valued 3D convolution over `[channel][angle][delay][time]` volumes.
//!
//! Angle and delay use zero "same" padding. The time axis is padded either
//! circularly or with zeros.

use ndarray::{Array4, ArrayView4, Axis};
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimePadding {
    Circular,
    Zero,
}

/// Kernel `[out][in][ka][kd][kt]` plus per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub weight: ndarray::Array5<f64>,
    pub bias: Vec<f64>,
}

impl Conv3d {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: (usize, usize, usize)) -> Self {
        Conv3d { weight: ndarray::Array5::zeros((out_ch, in_ch, kernel.0, kernel.1, kernel.2)), bias: vec![0.0; out_ch] }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn kernel(&self) -> (usize, usize, usize) {
        let d = self.weight.dim();
        (d.2, d.3, d.4)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let (ka, kd, kt) = self.kernel();
        if ka % 2 == 0 || kd % 2 == 0 || kt % 2 == 0 {
            return Err(Error::Shape(format!("{name}: kernel extents must be odd, got {ka}×{kd}×{kt}")));
        }
        if self.bias.len() != self.out_channels() {
            return Err(Error::Shape(format!("{name}: {} biases for {} outputs", self.bias.len(), self.out_channels())));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name}: non-finite weight")));
        }
        Ok(())
    }

    /// Applies the convolution to `x` of shape `[in][A][D][T]`.
    pub fn forward(&self, x: ArrayView4<f64>, padding: TimePadding) -> Result<Array4<f64>> {
        let (c_in, n_a, n_d, n_t) = x.dim();
        if c_in != self.in_channels() {
            return Err(Error::Shape(format!("conv expects {} input channels, got {c_in}", self.in_channels())));
        }
        let (ka, kd, kt) = self.kernel();
        let (pa, pd, pt) = (ka / 2, kd / 2, kt / 2);
        let tp = n_t + 2 * pt;

        // time-padded copy: [in][A][D][T + 2pt]
        let mut xp = Array4::<f64>::zeros((c_in, n_a, n_d, tp));
        for ((ci, a, d, t), &v) in x.indexed_iter() {
            xp[[ci, a, d, t + pt]] = v;
        }
        if padding == TimePadding::Circular && pt > 0 {
            for ci in 0..c_in {
                for a in 0..n_a {
                    for d in 0..n_d {
                        for k in 0..pt {
                            // left pad k holds t = n_t − pt + k, right pad holds t = k
                            xp[[ci, a, d, k]] = x[[ci, a, d, (n_t * pt + k - pt) % n_t]];
                            xp[[ci, a, d, pt + n_t + k]] = x[[ci, a, d, k % n_t]];
                        }
                    }
                }
            }
        }
        let xp = xp.as_standard_layout();
        let src = xp.as_slice().expect("standard layout");
        let row = tp;
        let plane = n_d * row;
        let vol = n_a * plane;

        let c_out = self.out_channels();
        let mut out = Array4::<f64>::zeros((c_out, n_a, n_d, n_t));
        let w = self.weight.as_standard_layout();
        let w = w.as_slice().expect("standard layout");
        let out_slice = out.as_slice_mut().expect("fresh array");
        out_slice.par_chunks_mut(n_d * n_t).enumerate().for_each(|(idx, chunk)| {
            let co = idx / n_a;
            let a = idx % n_a;
            chunk.fill(self.bias[co]);
            for ci in 0..c_in {
                for ia in 0..ka {
                    let sa = a as isize + ia as isize - pa as isize;
                    if sa < 0 || sa >= n_a as isize {
                        continue;
                    }
                    let base_a = ci * vol + sa as usize * plane;
                    for id in 0..kd {
                        let wbase = (((co * c_in + ci) * ka + ia) * kd + id) * kt;
                        let taps = &w[wbase..wbase + kt];
                        if taps.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let d_lo = pd.saturating_sub(id);
                        let d_hi = (n_d + pd).saturating_sub(id).min(n_d);
                        for d in d_lo..d_hi {
                            let sd = d + id - pd;
                            let srow = &src[base_a + sd * row..base_a + sd * row + row];
                            let orow = &mut chunk[d * n_t..(d + 1) * n_t];
                            for (it, &wv) in taps.iter().enumerate() {
                                if wv == 0.0 {
                                    continue;
                                }
                                for (o, s) in orow.iter_mut().zip(&srow[it..it + n_t]) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

/// Straightforward reference convolution used by tests.
pub fn conv3d_reference(conv: &Conv3d, x: ArrayView4<f64>, padding: TimePadding) -> Array4<f64> {
    let (c_in, n_a, n_d, n_t) = x.dim();
    let (ka, kd, kt) = conv.kernel();
    let (pa, pd, pt) = ((ka / 2) as isize, (kd / 2) as isize, (kt / 2) as isize);
    let mut out = Array4::<f64>::zeros((conv.out_channels(), n_a, n_d, n_t));
    for ((co, a, d, t), o) in out.indexed_iter_mut() {
        let mut acc = conv.bias[co];
        for ci in 0..c_in {
            for ia in 0..ka {
                for id in 0..kd {
                    for it in 0..kt {
                        let sa = a as isize + ia as isize - pa;
                        let sd = d as isize + id as isize - pd;
                        let mut st = t as isize + it as isize - pt;
                        if sa < 0 || sa >= n_a as isize || sd < 0 || sd >= n_d as isize {
                            continue;
                        }
                        if st < 0 || st >= n_t as isize {
                            match padding {
                                TimePadding::Zero => continue,
                                TimePadding::Circular => st = st.rem_euclid(n_t as isize),
                            }
                        }
                        acc += conv.weight[[co, ci, ia, id, it]] * x[[ci, sa as usize, sd as usize, st as usize]];
                    }
                }
            }
        }
        *o = acc;
    }
    out
}

/// Cyclic shift along the time axis.
pub fn roll_time(x: &Array4<f64>, shift: usize) -> Array4<f64> {
    let n_t = x.len_of(Axis(3));
    let mut out = x.clone();
    for ((c, a, d, t), v) in x.indexed_iter() {
        out[[c, a, d, (t + shift) % n_t]] = *v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use rand::Rng;

    fn random_conv(out: usize, inp: usize, k: (usize, usize, usize), seed: u64) -> Conv3d {
        let mut r = rng::stream(seed, Purpose::Test, 3);
        let mut c = Conv3d::zeros(out, inp, k);
        c.weight.mapv_inplace(|_| r.random::<f64>() - 0.5);
        c.bias.iter_mut().for_each(|b| *b = r.random::<f64>() - 0.5);
        c
    }

    fn random_vol(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = rng::stream(seed, Purpose::Test, 4);
        Array4::from_shape_fn(shape, |_| r.random::<f64>() - 0.5)
    }

    #[test]
    fn matches_reference_both_paddings() {
        for (k, shape) in [((3, 11, 3), (2, 5, 14, 4)), ((3, 5, 1), (2, 3, 6, 5)), ((1, 1, 5), (2, 2, 2, 3))] {
            let conv = random_conv(3, 2, k, 1);
            let x = random_vol(shape, 2);
            for pad in [TimePadding::Zero, TimePadding::Circular] {
                let fast = conv.forward(x.view(), pad).unwrap();
                let slow = conv3d_reference(&conv, x.view(), pad);
                let err = (&fast - &slow).iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "{k:?} {pad:?}: {err}");
            }
        }
    }

    #[test]
    fn circular_padding_commutes_with_roll() {
        let conv = random_conv(4, 2, (3, 3, 3), 5);
        let x = random_vol((2, 4, 6, 7), 6);
        let a = roll_time(&conv.forward(x.view(), TimePadding::Circular).unwrap(), 3);
        let b = conv.forward(roll_time(&x, 3).view(), TimePadding::Circular).unwrap();
        assert!((&a - &b).iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn identity_kernel() {
        let mut conv = Conv3d::zeros(2, 2, (3, 3, 3));
        conv.weight[[0, 0, 1, 1, 1]] = 1.0;
        conv.weight[[1, 1, 1, 1, 1]] = 1.0;
        let x = random_vol((2, 3, 4, 5), 9);
        assert_eq!(conv.forward(x.view(), TimePadding::Zero).unwrap(), x);
    }

    #[test]
    fn validation() {
        assert!(Conv3d::zeros(1, 1, (2, 3, 3)).validate("c").is_err());
        let mut c = Conv3d::zeros(1, 1, (3, 3, 3));
        c.weight[[0, 0, 0, 0, 0]] = f64::NAN;
        assert!(c.validate("c").is_err());
        assert!(Conv3d::zeros(1, 2, (1, 1, 1)).forward(random_vol((3, 1, 1, 1), 0).view(), TimePadding::Zero).is_err());
    }
}
