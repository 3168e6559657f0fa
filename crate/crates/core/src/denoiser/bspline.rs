//! Uniform cubic B-spline activation.
//!
//! Knots `t_i = −R + i·h`, `i = 0..n`, `h = 2R/(n−1)`. There are `n + 2` basis
//! functions, centered at `t_{−1} .. t_n`, so every point of the span sees four
//! of them and both partition of unity and linear reproduction hold up to the
//! boundaries. Outside `[−R, R]` the spline continues along the tangent at the
//! nearest boundary.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotGrid {
    pub n_knots: usize,
    pub range: f64,
}

impl KnotGrid {
    pub fn new(n_knots: usize, range: f64) -> Result<Self> {
        if n_knots < 4 {
            return Err(Error::InvalidArgument(format!("spline needs at least 4 knots, got {n_knots}")));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidArgument(format!("spline range must be positive, got {range}")));
        }
        Ok(KnotGrid { n_knots, range })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.range / (self.n_knots - 1) as f64
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_knots + 2
    }

    /// Center of basis function `j` (0-based coefficient index, so `j = 0` is `t_{−1}`).
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 - 1.0 - self.mid()) * self.spacing()
    }

    // index of the origin on the knot grid; keeps centers exactly symmetric
    fn mid(&self) -> f64 {
        (self.n_knots - 1) as f64 / 2.0
    }

    /// Coefficients for which the spline is `x` on the span.
    pub fn identity_coeffs(&self) -> Vec<f64> {
        (0..self.n_coeffs()).map(|j| self.center(j)).collect()
    }
}

impl Default for KnotGrid {
    fn default() -> Self {
        KnotGrid { n_knots: 31, range: 3.0 }
    }
}

fn weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    let u = 1.0 - s;
    [u * u * u / 6.0, (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0, (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0, s3 / 6.0]
}

fn dweights(s: f64) -> [f64; 4] {
    let u = 1.0 - s;
    [-u * u / 2.0, (3.0 * s * s - 4.0 * s) / 2.0, (-3.0 * s * s + 2.0 * s + 1.0) / 2.0, s * s / 2.0]
}

fn locate(x: f64, grid: &KnotGrid) -> (usize, f64) {
    let pos = x / grid.spacing() + grid.mid();
    let i = (pos.floor().max(0.0) as usize).min(grid.n_knots - 2);
    (i, pos - i as f64)
}

fn eval_inside(x: f64, coeffs: &[f64], grid: &KnotGrid) -> (f64, f64) {
    let (i, s) = locate(x, grid);
    let w = weights(s);
    let dw = dweights(s);
    let c = &coeffs[i..i + 4];
    let v = c.iter().zip(w).map(|(c, w)| c * w).sum();
    let d = c.iter().zip(dw).map(|(c, w)| c * w).sum::<f64>() / grid.spacing();
    (v, d)
}

/// Spline value at `x`. `coeffs.len()` must equal `grid.n_coeffs()`.
pub fn bspline_eval(x: f64, coeffs: &[f64], grid: &KnotGrid) -> f64 {
    debug_assert_eq!(coeffs.len(), grid.n_coeffs());
    let r = grid.range;
    if x < -r {
        let (v, d) = eval_inside(-r, coeffs, grid);
        v + d * (x + r)
    } else if x > r {
        let (v, d) = eval_inside(r, coeffs, grid);
        v + d * (x - r)
    } else {
        eval_inside(x, coeffs, grid).0
    }
}

/// Spline derivative at `x`.
pub fn bspline_derivative(x: f64, coeffs: &[f64], grid: &KnotGrid) -> f64 {
    eval_inside(x.clamp(-grid.range, grid.range), coeffs, grid).1
}
