//! Channel-multiplexed spherical tensors.

use crate::error::{Error, Result};
use crate::so3::rotation::Rotation;
use crate::so3::wigner::wigner_d_all;

/// Concatenated order-ℓ blocks, each `channels × (2ℓ+1)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrepsTensor {
    pub l_max: usize,
    pub channels: usize,
    pub blocks: Vec<Vec<f64>>,
}

impl IrrepsTensor {
    pub fn zeros(l_max: usize, channels: usize) -> Self {
        let blocks = (0..=l_max).map(|l| vec![0.0; channels * (2 * l + 1)]).collect();
        Self { l_max, channels, blocks }
    }

    pub fn from_blocks(l_max: usize, channels: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if channels == 0 || blocks.len() != l_max + 1 {
            return Err(Error::Shape(format!("expected {} blocks with channels ≥ 1", l_max + 1)));
        }
        for (l, b) in blocks.iter().enumerate() {
            if b.len() != channels * (2 * l + 1) {
                return Err(Error::Shape(format!("block {l} has {} entries, expected {}", b.len(), channels * (2 * l + 1))));
            }
        }
        Ok(Self { l_max, channels, blocks })
    }

    /// Total number of entries, `C (ℓ_max+1)²`.
    pub fn dim(&self) -> usize {
        self.channels * (self.l_max + 1) * (self.l_max + 1)
    }

    pub fn get(&self, l: usize, channel: usize, m: i64) -> f64 {
        self.blocks[l][channel * (2 * l + 1) + (m + l as i64) as usize]
    }

    pub fn set(&mut self, l: usize, channel: usize, m: i64, value: f64) {
        self.blocks[l][channel * (2 * l + 1) + (m + l as i64) as usize] = value;
    }

    /// Flattens to the component-major layout `[(ℓ² + ℓ + m)·C + c]` used by the models.
    pub fn to_component_major(&self) -> Vec<f64> {
        let c = self.channels;
        let mut out = vec![0.0; self.dim()];
        for l in 0..=self.l_max {
            for ch in 0..c {
                for m in -(l as i64)..=l as i64 {
                    let comp = l * l + (m + l as i64) as usize;
                    out[comp * c + ch] = self.get(l, ch, m);
                }
            }
        }
        out
    }

    pub fn from_component_major(l_max: usize, channels: usize, flat: &[f64]) -> Result<Self> {
        let mut t = Self::zeros(l_max, channels);
        if flat.len() != t.dim() {
            return Err(Error::Shape(format!("expected {} entries, got {}", t.dim(), flat.len())));
        }
        for l in 0..=l_max {
            for ch in 0..channels {
                for m in -(l as i64)..=l as i64 {
                    let comp = l * l + (m + l as i64) as usize;
                    t.set(l, ch, m, flat[comp * channels + ch]);
                }
            }
        }
        Ok(t)
    }

    pub fn max_abs_diff(&self, other: &IrrepsTensor) -> f64 {
        self.blocks.iter().flatten().zip(other.blocks.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Rotates every block: `block ← block · D_ℓ(R)ᵀ`.
pub fn act_on_irreps(rotation: &Rotation, t: &IrrepsTensor) -> IrrepsTensor {
    let ds = wigner_d_all(rotation, t.l_max);
    let blocks = t
        .blocks
        .iter()
        .zip(&ds)
        .map(|(block, d)| {
            let w = d.dim();
            block.chunks(w).flat_map(|row| d.apply(row)).collect()
        })
        .collect();
    IrrepsTensor { l_max: t.l_max, channels: t.channels, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::rotation::sample_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, l_max: usize, c: usize) -> IrrepsTensor {
        let blocks = (0..=l_max).map(|l| (0..c * (2 * l + 1)).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        IrrepsTensor::from_blocks(l_max, c, blocks).unwrap()
    }

    #[test]
    fn identity_leaves_tensor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = random_tensor(&mut rng, 3, 4);
        assert!(act_on_irreps(&Rotation::IDENTITY, &t).max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn scalars_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, 2, 3);
        let r = sample_rotation(&mut rng);
        let out = act_on_irreps(&r, &t);
        for (a, b) in out.blocks[0].iter().zip(&t.blocks[0]) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn composition_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let t = random_tensor(&mut rng, 4, 2);
            let r1 = sample_rotation(&mut rng);
            let r2 = sample_rotation(&mut rng);
            let lhs = act_on_irreps(&r2, &act_on_irreps(&r1, &t));
            let rhs = act_on_irreps(&(r2 * r1), &t);
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }

    #[test]
    fn dimension_and_layout_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, 4, 4);
        assert_eq!(t.dim(), 100);
        let back = IrrepsTensor::from_component_major(4, 4, &t.to_component_major()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_block_shape() {
        assert!(IrrepsTensor::from_blocks(1, 2, vec![vec![0.0; 2], vec![0.0; 5]]).is_err());
    }
}
