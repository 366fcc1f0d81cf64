//! Real spherical harmonics.
//!
//! Orthonormal real harmonics with the polar axis along `y` and the azimuth
//! measured in the `(z, x)` plane. With this choice the order-1 harmonics are
//! `√(3/4π)·(x, y, z)` for `m = (-1, 0, 1)`, so the order-1 Wigner matrix of a
//! rotation is the rotation matrix itself, and a direction aligned with `y`
//! excites only the `m = 0` component of every order.
//!
//! Components of all orders are stored in one flat vector, order-major, with
//! `m` running from `-ℓ` to `ℓ`; see [`sh_index`].

use crate::error::{Error, Result};
use crate::so3::rotation::Vec3;
use std::f64::consts::PI;

/// Flat index of component `(ℓ, m)`.
#[inline]
pub fn sh_index(l: usize, m: i64) -> usize {
    l * l + (l as i64 + m) as usize
}

/// Number of components for all orders up to `l_max`.
#[inline]
pub fn sh_dim(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Evaluates all real harmonics up to `l_max` for a unit direction.
pub fn real_spherical_harmonics(direction: Vec3, l_max: usize) -> Result<Vec<f64>> {
    let n = crate::so3::rotation::norm(direction);
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm: n });
    }
    Ok(sh_unchecked(direction, l_max))
}

/// Same as [`real_spherical_harmonics`] but split into per-order vectors.
pub fn real_spherical_harmonics_by_order(direction: Vec3, l_max: usize) -> Result<Vec<Vec<f64>>> {
    let flat = real_spherical_harmonics(direction, l_max)?;
    Ok((0..=l_max).map(|l| flat[l * l..(l + 1) * (l + 1)].to_vec()).collect())
}

/// Harmonics of a direction assumed to be unit length.
pub(crate) fn sh_unchecked(direction: Vec3, l_max: usize) -> Vec<f64> {
    // polar coordinate c, azimuthal plane (a, b)
    let a = direction[2];
    let b = direction[0];
    let c = direction[1];
    let mut out = vec![0.0; sh_dim(l_max)];

    // (a + i b)^m = sin^m θ · e^{imφ}
    let mut cos_m = vec![1.0; l_max + 1];
    let mut sin_m = vec![0.0; l_max + 1];
    for m in 1..=l_max {
        cos_m[m] = cos_m[m - 1] * a - sin_m[m - 1] * b;
        sin_m[m] = sin_m[m - 1] * a + cos_m[m - 1] * b;
    }

    // Q_l^m(c) = P_l^m(c) / sin^m θ without the Condon–Shortley phase.
    for m in 0..=l_max {
        let mut q_prev2 = 0.0;
        let mut q_prev = double_factorial(2 * m as i64 - 1);
        for l in m..=l_max {
            let q = if l == m {
                q_prev
            } else if l == m + 1 {
                (2 * m + 1) as f64 * c * q_prev
            } else {
                ((2 * l - 1) as f64 * c * q_prev - (l + m - 1) as f64 * q_prev2) / (l - m) as f64
            };
            if l > m {
                q_prev2 = q_prev;
                q_prev = q;
            }
            let norm = normalization(l, m);
            if m == 0 {
                out[sh_index(l, 0)] = norm * q;
            } else {
                let k = std::f64::consts::SQRT_2 * norm * q;
                out[sh_index(l, m as i64)] = k * cos_m[m];
                out[sh_index(l, -(m as i64))] = k * sin_m[m];
            }
        }
    }
    out
}

/// Tabulated evaluation cost in FLOPs of all harmonics up to `l_max`.
pub fn sh_flops(l_max: usize) -> u64 {
    // azimuthal powers + Legendre recurrence + normalization per component
    (6 * l_max + 6 * sh_dim(l_max)) as u64
}

fn normalization(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

fn double_factorial(n: i64) -> f64 {
    let mut out = 1.0;
    let mut k = n;
    while k > 1 {
        out *= k as f64;
        k -= 2;
    }
    out
}
