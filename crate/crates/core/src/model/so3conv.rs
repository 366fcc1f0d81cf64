//! Edge convolutions on spherical features: the Clebsch–Gordan reference
//! path and its frame-aligned SO(2) reduction.

use crate::error::{Error, Result};
use crate::so3::frame::{EdgeFrame, EDGE_FRAME_FLOPS};
use crate::so3::harmonics::{sh_flops, sh_index, sh_unchecked};
use crate::so3::irreps::{act_on_irreps, IrrepsTensor};
use crate::so3::rotation::{norm, Vec3};
use crate::so3::wigner::wigner_flops;
use crate::so3::CGTable;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Learnable coupling weights, one `C × C` channel mixer per path `(ℓ1, ℓ2, ℓ3)`.
#[derive(Debug, Clone)]
pub struct PathWeights {
    pub l_max: usize,
    pub channels: usize,
    pub paths: BTreeMap<(usize, usize, usize), Vec<f64>>,
}

impl PathWeights {
    /// All paths with every order `≤ l_max` that satisfy the triangle rule.
    pub fn allowed_paths(l_max: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for l1 in 0..=l_max {
            for l2 in 0..=l_max {
                for l3 in l1.abs_diff(l2)..=(l1 + l2).min(l_max) {
                    out.push((l1, l2, l3));
                }
            }
        }
        out
    }

    pub fn from_fn(l_max: usize, channels: usize, mut f: impl FnMut() -> f64) -> Self {
        let paths = Self::allowed_paths(l_max).into_iter().map(|p| (p, (0..channels * channels).map(|_| f()).collect())).collect();
        Self { l_max, channels, paths }
    }
}

fn unit(r: Vec3) -> Result<Vec3> {
    let n = norm(r);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroLengthEdge { src: 0, dst: 0 });
    }
    Ok([r[0] / n, r[1] / n, r[2] / n])
}

fn check_shapes(h: &IrrepsTensor, l_max: usize, channels: usize) -> Result<()> {
    if h.l_max != l_max || h.channels != channels {
        return Err(Error::Shape(format!("features (ℓ_max {}, C {}) do not match weights (ℓ_max {l_max}, C {channels})", h.l_max, h.channels)));
    }
    Ok(())
}

/// Reference message: couple `h_u` with the harmonics of `r_uv` through every path.
pub fn so3_convolution_full(h: &IrrepsTensor, r_uv: Vec3, weights: &PathWeights, cg: &CGTable) -> Result<IrrepsTensor> {
    check_shapes(h, weights.l_max, weights.channels)?;
    if cg.l_max() < weights.l_max {
        return Err(Error::Config("coupling table order below feature order".into()));
    }
    let c = weights.channels;
    let y = sh_unchecked(unit(r_uv)?, weights.l_max);
    let mut out = IrrepsTensor::zeros(weights.l_max, c);
    for (&(l1, l2, l3), w) in &weights.paths {
        let block = cg.block(l1, l2, l3).expect("allowed path");
        let (d1, d2, d3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
        // t[c][m3] = Σ h[c][m1] C[m1,m2,m3] Y[m2]
        let mut t = vec![0.0; c * d3];
        for a in 0..d1 {
            for b in 0..d2 {
                let yb = y[l2 * l2 + b];
                for k in 0..d3 {
                    let coef = block[(a * d2 + b) * d3 + k] * yb;
                    if coef == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        t[ch * d3 + k] += h.blocks[l1][ch * d1 + a] * coef;
                    }
                }
            }
        }
        let o = &mut out.blocks[l3];
        for ci in 0..c {
            for co in 0..c {
                let wv = w[ci * c + co];
                for k in 0..d3 {
                    o[co * d3 + k] += wv * t[ci * d3 + k];
                }
            }
        }
    }
    Ok(out)
}

/// FLOPs of one [`so3_convolution_full`] call.
pub fn so3_convolution_flops(l_max: usize, channels: usize, cg: &CGTable) -> u64 {
    let c = channels as u64;
    let mut f = sh_flops(l_max);
    for (l1, l2, l3) in PathWeights::allowed_paths(l_max) {
        let nnz = cg.block(l1, l2, l3).expect("allowed path").iter().filter(|v| **v != 0.0).count() as u64;
        f += nnz * (1 + 2 * c) + 2 * c * c * (2 * l3 as u64 + 1);
    }
    f
}

/// Per-order SO(2) kernels in the edge frame.
///
/// `w0` acts on the `m = 0` components of all orders, indexed `ℓ·C + c`.
/// For `m ≥ 1`, `wa[m-1]` and `wb[m-1]` act on orders `ℓ ≥ m`, indexed
/// `(ℓ − m)·C + c`, through the complex-multiplication rule
/// `y₊ = x₊·Wa − x₋·Wb`, `y₋ = x₊·Wb + x₋·Wa`.
#[derive(Debug, Clone)]
pub struct So2Kernels {
    pub l_max: usize,
    pub m_max: usize,
    pub channels: usize,
    pub w0: Vec<f64>,
    pub wa: Vec<Vec<f64>>,
    pub wb: Vec<Vec<f64>>,
}

impl So2Kernels {
    pub fn zeros(l_max: usize, m_max: usize, channels: usize) -> Result<Self> {
        if m_max > l_max {
            return Err(Error::Config(format!("m_max {m_max} exceeds l_max {l_max}")));
        }
        let dim = |m: usize| (l_max + 1 - m) * channels;
        Ok(Self {
            l_max,
            m_max,
            channels,
            w0: vec![0.0; dim(0) * dim(0)],
            wa: (1..=m_max).map(|m| vec![0.0; dim(m) * dim(m)]).collect(),
            wb: (1..=m_max).map(|m| vec![0.0; dim(m) * dim(m)]).collect(),
        })
    }

    /// Kernels equivalent to the path weights; the zonal harmonic values of
    /// the aligned direction are folded into the weights.
    pub fn from_paths(weights: &PathWeights, cg: &CGTable, m_max: usize) -> Result<Self> {
        let l_max = weights.l_max;
        let c = weights.channels;
        let mut k = Self::zeros(l_max, m_max, c)?;
        for (&(l1, l2, l3), w) in &weights.paths {
            let y0 = ((2 * l2 + 1) as f64 / (4.0 * PI)).sqrt();
            for m in 0..=m_max.min(l1).min(l3) {
                let mi = m as i64;
                let same = cg.get(l1, mi, l2, 0, l3, mi) * y0;
                let cross = if m == 0 { 0.0 } else { cg.get(l1, mi, l2, 0, l3, -mi) * y0 };
                let dim = (l_max + 1 - m) * c;
                for ci in 0..c {
                    for co in 0..c {
                        let row = (l1 - m) * c + ci;
                        let col = (l3 - m) * c + co;
                        let wv = w[ci * c + co];
                        if m == 0 {
                            k.w0[row * dim + col] += wv * same;
                        } else {
                            k.wa[m - 1][row * dim + col] += wv * same;
                            k.wb[m - 1][row * dim + col] += wv * cross;
                        }
                    }
                }
            }
        }
        Ok(k)
    }
}

fn vec_mat(x: &[f64], w: &[f64], n: usize, out: &mut [f64], sign: f64) {
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        for j in 0..n {
            out[j] += sign * xi * w[i * n + j];
        }
    }
}

/// Rotate `h_u` into the edge frame, apply the SO(2) kernels, rotate back.
pub fn so2_convolution_reduced(h: &IrrepsTensor, frame: &EdgeFrame, kernels: &So2Kernels) -> Result<IrrepsTensor> {
    check_shapes(h, kernels.l_max, kernels.channels)?;
    let (l_max, c) = (kernels.l_max, kernels.channels);
    let ht = act_on_irreps(&frame.rotation, h);
    let mut y = IrrepsTensor::zeros(l_max, c);
    for m in 0..=kernels.m_max {
        let dim = (l_max + 1 - m) * c;
        let gather = |sign: i64| -> Vec<f64> {
            let mut v = vec![0.0; dim];
            for l in m..=l_max {
                for ch in 0..c {
                    v[(l - m) * c + ch] = ht.get(l, ch, sign * m as i64);
                }
            }
            v
        };
        let (mut yp, mut yn) = (vec![0.0; dim], vec![0.0; dim]);
        let xp = gather(1);
        if m == 0 {
            vec_mat(&xp, &kernels.w0, dim, &mut yp, 1.0);
        } else {
            let xn = gather(-1);
            let (wa, wb) = (&kernels.wa[m - 1], &kernels.wb[m - 1]);
            vec_mat(&xp, wa, dim, &mut yp, 1.0);
            vec_mat(&xn, wb, dim, &mut yp, -1.0);
            vec_mat(&xp, wb, dim, &mut yn, 1.0);
            vec_mat(&xn, wa, dim, &mut yn, 1.0);
        }
        for l in m..=l_max {
            for ch in 0..c {
                y.set(l, ch, m as i64, yp[(l - m) * c + ch]);
                if m > 0 {
                    y.set(l, ch, -(m as i64), yn[(l - m) * c + ch]);
                }
            }
        }
    }
    Ok(act_on_irreps(&frame.rotation.inverse(), &y))
}

/// FLOPs of one [`so2_convolution_reduced`] call, frame and Wigner matrices included.
pub fn so2_convolution_flops(l_max: usize, m_max: usize, channels: usize) -> u64 {
    let c = channels as u64;
    let rotate: u64 = (0..=l_max as u64).map(|l| 2 * (2 * l + 1) * (2 * l + 1) * c).sum();
    let mut kernel = 0;
    for m in 0..=m_max as u64 {
        let dim = (l_max as u64 + 1 - m) * c;
        kernel += if m == 0 { 2 * dim * dim } else { 4 * 2 * dim * dim + 2 * dim };
    }
    EDGE_FRAME_FLOPS + wigner_flops(l_max) + 2 * rotate + kernel
}

/// Flat component index of `(ℓ, m)` in the model layout `[(ℓ² + ℓ + m)·C + c]`.
pub fn component_col(l: usize, m: i64, channels: usize, ch: usize) -> usize {
    sh_index(l, m) * channels + ch
}
