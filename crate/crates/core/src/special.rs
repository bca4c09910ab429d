//! Special functions used by the field solvers.

use std::f64::consts::FRAC_PI_2;

#[inline]
pub fn j0(x: f64) -> f64 {
    puruspe::Jn(0, x)
}

#[inline]
pub fn j1(x: f64) -> f64 {
    puruspe::Jn(1, x)
}

/// Complete elliptic integral of the first kind, `K(m)` with parameter `m = k²`,
/// by the arithmetic-geometric mean. Diverges logarithmically as `m -> 1`.
pub fn ellip_k(m: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&m));
    if m >= 1.0 {
        return f64::INFINITY;
    }
    let mut a = 1.0;
    let mut b = (1.0 - m).sqrt();
    for _ in 0..64 {
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        a = an;
        b = bn;
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
    }
    FRAC_PI_2 / a
}
