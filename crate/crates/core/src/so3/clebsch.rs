//! Clebsch–Gordan coefficients in the real harmonic basis.
//!
//! Complex coefficients come from Racah's closed form evaluated in exact
//! rational arithmetic (the square of each coefficient is rational), then are
//! conjugated into the real basis used by [`crate::so3::harmonics`].

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::HashMap;

/// Real coupling coefficients for every `(ℓ1, ℓ2, ℓ3)` with all orders `≤ l_max`.
#[derive(Debug, Clone)]
pub struct CGTable {
    l_max: usize,
    // dense (2ℓ1+1)×(2ℓ2+1)×(2ℓ3+1) block per allowed triple
    blocks: HashMap<(usize, usize, usize), Vec<f64>>,
}

impl CGTable {
    pub fn new(l_max: usize) -> Self {
        assert!(l_max <= crate::so3::wigner::MAX_ORDER, "order {l_max} exceeds precompute budget");
        let mut blocks = HashMap::new();
        for l1 in 0..=l_max {
            for l2 in 0..=l_max {
                for l3 in l1.abs_diff(l2)..=(l1 + l2).min(l_max) {
                    blocks.insert((l1, l2, l3), real_block(l1, l2, l3));
                }
            }
        }
        Self { l_max, blocks }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Coefficient `C^{(ℓ3 m3)}_{(ℓ1 m1),(ℓ2 m2)}`; zero outside the selection rule.
    pub fn get(&self, l1: usize, m1: i64, l2: usize, m2: i64, l3: usize, m3: i64) -> f64 {
        match self.block(l1, l2, l3) {
            Some(b) => {
                let (d2, d3) = ((2 * l2 + 1) as i64, (2 * l3 + 1) as i64);
                let (a, bb, c) = (m1 + l1 as i64, m2 + l2 as i64, m3 + l3 as i64);
                if a < 0 || bb < 0 || c < 0 || a > 2 * l1 as i64 || bb >= d2 || c >= d3 {
                    return 0.0;
                }
                b[((a * d2 + bb) * d3 + c) as usize]
            }
            None => 0.0,
        }
    }

    /// Dense block indexed `[(m1+ℓ1)·(2ℓ2+1) + (m2+ℓ2)]·(2ℓ3+1) + (m3+ℓ3)`.
    pub fn block(&self, l1: usize, l2: usize, l3: usize) -> Option<&[f64]> {
        self.blocks.get(&(l1, l2, l3)).map(Vec::as_slice)
    }
}

/// Shorthand for `CGTable::new`.
pub fn clebsch_gordan(l_max: usize) -> CGTable {
    CGTable::new(l_max)
}

fn factorial(n: i64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// Complex-basis coefficient `⟨ℓ1 m1 ℓ2 m2 | ℓ3 m3⟩` via Racah's formula.
pub fn complex_cg(l1: i64, m1: i64, l2: i64, m2: i64, l3: i64, m3: i64) -> f64 {
    if m1 + m2 != m3 || l3 < (l1 - l2).abs() || l3 > l1 + l2 || m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return 0.0;
    }
    let f = |n: i64| BigRational::from_integer(factorial(n));
    let pre = BigRational::from_integer(BigInt::from(2 * l3 + 1)) * f(l3 + l1 - l2) * f(l3 - l1 + l2) * f(l1 + l2 - l3) / f(l1 + l2 + l3 + 1)
        * f(l3 + m3)
        * f(l3 - m3)
        * f(l1 - m1)
        * f(l1 + m1)
        * f(l2 - m2)
        * f(l2 + m2);
    let mut sum = BigRational::zero();
    for k in 0..=(l1 + l2 - l3) {
        let terms = [k, l1 + l2 - l3 - k, l1 - m1 - k, l2 + m2 - k, l3 - l2 + m1 + k, l3 - l1 - m2 + k];
        if terms.iter().any(|&t| t < 0) {
            continue;
        }
        let denom = terms.iter().fold(BigInt::one(), |acc, &t| acc * factorial(t));
        let term = BigRational::new(BigInt::one(), denom);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    let squared = pre * &sum * &sum;
    let magnitude = squared.to_f64().expect("finite rational").sqrt();
    if sum.is_negative() {
        -magnitude
    } else {
        magnitude
    }
}

/// Row `m_real` of the complex→real change of basis: `Y_real = U · Y_complex`.
fn real_from_complex(l: i64) -> Vec<Complex64> {
    let d = (2 * l + 1) as usize;
    let mut u = vec![Complex64::zero(); d * d];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let idx = |mr: i64, mc: i64| ((mr + l) as usize) * d + (mc + l) as usize;
    u[idx(0, 0)] = Complex64::new(1.0, 0.0);
    for mu in 1..=l {
        let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
        u[idx(mu, -mu)] = Complex64::new(h, 0.0);
        u[idx(mu, mu)] = Complex64::new(sign * h, 0.0);
        u[idx(-mu, -mu)] = Complex64::new(0.0, h);
        u[idx(-mu, mu)] = Complex64::new(0.0, -sign * h);
    }
    u
}

fn real_block(l1: usize, l2: usize, l3: usize) -> Vec<f64> {
    let (i1, i2, i3) = (l1 as i64, l2 as i64, l3 as i64);
    let (d1, d2, d3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
    let (u1, u2, u3) = (real_from_complex(i1), real_from_complex(i2), real_from_complex(i3));
    let mut complex = vec![0.0; d1 * d2 * d3];
    for m1 in -i1..=i1 {
        for m2 in -i2..=i2 {
            let m3 = m1 + m2;
            if m3.abs() <= i3 {
                complex[(((m1 + i1) as usize) * d2 + (m2 + i2) as usize) * d3 + (m3 + i3) as usize] = complex_cg(i1, m1, i2, m2, i3, m3);
            }
        }
    }
    // The transformed coefficients are purely real when ℓ1+ℓ2+ℓ3 is even and
    // purely imaginary otherwise; the constant phase is dropped.
    let take_real = (l1 + l2 + l3).is_multiple_of(2);
    let mut out = vec![0.0; d1 * d2 * d3];
    for a in 0..d1 {
        for b in 0..d2 {
            for c in 0..d3 {
                let mut acc = Complex64::zero();
                for p in 0..d1 {
                    let x1 = u1[a * d1 + p].conj();
                    if x1 == Complex64::zero() {
                        continue;
                    }
                    for q in 0..d2 {
                        let x2 = u2[b * d2 + q].conj();
                        if x2 == Complex64::zero() {
                            continue;
                        }
                        for r in 0..d3 {
                            let cg = complex[(p * d2 + q) * d3 + r];
                            if cg != 0.0 {
                                acc += u3[c * d3 + r] * x1 * x2 * cg;
                            }
                        }
                    }
                }
                out[(a * d2 + b) * d3 + c] = if take_real { acc.re } else { acc.im };
            }
        }
    }
    out
}
