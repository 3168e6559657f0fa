use crate::C64;

/// Proximal map of `λ|·|` on a complex scalar: `u·max(0, 1 − λ/|u|)`.
#[inline]
pub fn soft_threshold(u: C64, lambda: f64) -> C64 {
    let m = u.norm();
    if m <= lambda {
        C64::new(0.0, 0.0)
    } else {
        u * ((m - lambda) / m)
    }
}
