//! Real-basis Wigner-D matrices.
//!
//! `D_ℓ(R)` is the unique matrix with `Y_ℓ(R r̂) = D_ℓ(R) Y_ℓ(r̂)` for every
//! direction. It is recovered by projecting the rotated harmonics of a fixed
//! spherical point set onto the pseudo-inverse of the unrotated ones; the
//! relation is exact, so the result is exact up to rounding.

use crate::so3::harmonics::{sh_dim, sh_index, sh_unchecked};
use crate::so3::rotation::{Rotation, Vec3};
use nalgebra::DMatrix;
use once_cell::sync::OnceCell;

pub const MAX_ORDER: usize = 8;

/// Wigner-D matrix of one order, row-major `(2ℓ+1)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerD {
    pub l: usize,
    pub matrix: Vec<f64>,
}

impl WignerD {
    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    pub fn identity(l: usize) -> Self {
        let d = 2 * l + 1;
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            matrix[i * d + i] = 1.0;
        }
        Self { l, matrix }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim() + col]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| (0..d).map(|j| self.matrix[i * d + j] * v[j]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim();
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                matrix[j * d + i] = self.matrix[i * d + j];
            }
        }
        Self { l: self.l, matrix }
    }

    pub fn matmul(&self, other: &WignerD) -> Self {
        assert_eq!(self.l, other.l);
        let d = self.dim();
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.matrix[i * d + k];
                for j in 0..d {
                    matrix[i * d + j] += a * other.matrix[k * d + j];
                }
            }
        }
        Self { l: self.l, matrix }
    }

    pub fn max_abs_diff(&self, other: &WignerD) -> f64 {
        self.matrix.iter().zip(&other.matrix).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest absolute entry of `D Dᵀ - I`.
    pub fn orthogonality_error(&self) -> f64 {
        self.matmul(&self.transpose()).max_abs_diff(&WignerD::identity(self.l))
    }
}

struct Projector {
    points: Vec<Vec3>,
    // per order: K × (2ℓ+1) pseudo-inverse, row-major
    pinv: Vec<Vec<f64>>,
}

fn projector(l_max: usize) -> &'static Projector {
    static CACHE: [OnceCell<Projector>; MAX_ORDER + 1] = [const { OnceCell::new() }; MAX_ORDER + 1];
    CACHE[l_max].get_or_init(|| build_projector(l_max))
}

fn build_projector(l_max: usize) -> Projector {
    let k = 2 * (2 * l_max + 1) + 1;
    let points = fibonacci_sphere(k);
    let values: Vec<Vec<f64>> = points.iter().map(|p| sh_unchecked(*p, l_max)).collect();
    let pinv = (0..=l_max)
        .map(|l| {
            let d = 2 * l + 1;
            let y = DMatrix::from_fn(d, k, |i, j| values[j][l * l + i]);
            let gram = &y * y.transpose();
            let inv = gram.try_inverse().expect("spherical point set must resolve every order");
            let p = y.transpose() * inv;
            let mut out = vec![0.0; k * d];
            for i in 0..k {
                for j in 0..d {
                    out[i * d + j] = p[(i, j)];
                }
            }
            out
        })
        .collect();
    Projector { points, pinv }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64 + 0.3;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Wigner-D matrix of order `l` for `rotation`.
pub fn wigner_d(rotation: &Rotation, l: usize) -> WignerD {
    wigner_d_all(rotation, l).pop().expect("at least one order")
}

/// Wigner-D matrices of all orders `0..=l_max`.
pub fn wigner_d_all(rotation: &Rotation, l_max: usize) -> Vec<WignerD> {
    assert!(l_max <= MAX_ORDER, "order {l_max} exceeds {MAX_ORDER}");
    let proj = projector(l_max);
    let k = proj.points.len();
    let rotated: Vec<Vec<f64>> = proj.points.iter().map(|p| sh_unchecked(rotation.apply(*p), l_max)).collect();
    (0..=l_max)
        .map(|l| {
            let d = 2 * l + 1;
            let pinv = &proj.pinv[l];
            let mut matrix = vec![0.0; d * d];
            for (kk, y) in rotated.iter().enumerate().take(k) {
                let row = &y[l * l..l * l + d];
                let p = &pinv[kk * d..(kk + 1) * d];
                for i in 0..d {
                    let yi = row[i];
                    for j in 0..d {
                        matrix[i * d + j] += yi * p[j];
                    }
                }
            }
            WignerD { l, matrix }
        })
        .collect()
}

/// Tabulated cost in FLOPs of [`wigner_d_all`].
pub fn wigner_flops(l_max: usize) -> u64 {
    let k = (2 * (2 * l_max + 1) + 1) as u64;
    let rotate_points = 15 * k;
    let harmonics = k * crate::so3::harmonics::sh_flops(l_max);
    let projection: u64 = (0..=l_max as u64).map(|l| 2 * k * (2 * l + 1) * (2 * l + 1)).sum();
    rotate_points + harmonics + projection
}

/// Applies block-diagonal Wigner matrices to a flat `(ℓ_max+1)²` vector.
pub fn rotate_flat(blocks: &[WignerD], v: &[f64]) -> Vec<f64> {
    let l_max = blocks.len() - 1;
    assert_eq!(v.len(), sh_dim(l_max));
    let mut out = vec![0.0; v.len()];
    for b in blocks {
        let s = sh_index(b.l, -(b.l as i64));
        let r = b.apply(&v[s..s + b.dim()]);
        out[s..s + b.dim()].copy_from_slice(&r);
    }
    out
}
