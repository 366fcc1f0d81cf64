//! Model configuration, scaling ladders, and width-based learning-rate transfer.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The four message-passing families, ordered by how much symmetry they build in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Unconstrained,
    Directional,
    CartesianVector,
    SphericalTensor,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Unconstrained, Family::Directional, Family::CartesianVector, Family::SphericalTensor];

    pub fn name(self) -> &'static str {
        match self {
            Family::Unconstrained => "unconstrained",
            Family::Directional => "directional",
            Family::CartesianVector => "cartesian-vector",
            Family::SphericalTensor => "spherical-tensor",
        }
    }

    /// Number of atom states that jointly enter one message term.
    pub fn body_order(self) -> usize {
        match self {
            Family::Directional => 4,
            _ => 2,
        }
    }

    pub fn is_equivariant(self) -> bool {
        self != Family::Unconstrained
    }

    /// Depth at which the family's loss stops improving on the toy task.
    pub fn saturation_depth(self) -> usize {
        match self {
            Family::Unconstrained => 3,
            Family::Directional => 4,
            Family::CartesianVector => 4,
            Family::SphericalTensor => 4,
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            Family::CartesianVector => 128,
            _ => 64,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" | "mpnn" => Ok(Family::Unconstrained),
            "directional" | "gemnet" => Ok(Family::Directional),
            "cartesian-vector" | "cartesian" | "egnn" => Ok(Family::CartesianVector),
            "spherical-tensor" | "spherical" | "esen" => Ok(Family::SphericalTensor),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

/// Graph construction radius and neighbor cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPreset {
    pub cutoff: f64,
    pub k_max: usize,
}

impl CutoffPreset {
    pub const STANDARD: CutoffPreset = CutoffPreset { cutoff: 6.0, k_max: 30 };
    pub const WIDE: CutoffPreset = CutoffPreset { cutoff: 10.0, k_max: 50 };

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Directional => Self::WIDE,
            _ => Self::STANDARD,
        }
    }
}

/// Everything needed to build a model's parameters and run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub depth: usize,
    /// Scalar embedding width; for spherical tensors, the full `C(ℓ_max+1)²`.
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    pub preset: CutoffPreset,
    /// Radial basis size for distance features.
    pub n_radial: usize,
    /// Angular basis size for bond angles and dihedrals (directional only).
    pub n_angular: usize,
    /// Edges longer than this take no part in triplets or quadruplets.
    pub angle_cutoff: f64,
    /// Atomic numbers with an embedding row, in row order.
    pub elements: Vec<u32>,
}

pub const DEFAULT_ELEMENTS: [u32; 4] = [1, 6, 7, 8];

impl ModelConfig {
    fn base(family: Family, depth: usize, width: usize) -> Self {
        Self {
            family,
            depth,
            width,
            vector_channels: None,
            l_max: None,
            m_max: None,
            channels: None,
            preset: CutoffPreset::for_family(family),
            n_radial: 8,
            n_angular: 4,
            angle_cutoff: 5.0,
            elements: DEFAULT_ELEMENTS.to_vec(),
        }
    }

    pub fn unconstrained(depth: usize, width: usize) -> Self {
        Self::base(Family::Unconstrained, depth, width)
    }

    pub fn directional(depth: usize, width: usize) -> Self {
        Self::base(Family::Directional, depth, width)
    }

    /// Vector channels follow `E = round(√w)`.
    pub fn cartesian(depth: usize, width: usize) -> Self {
        let mut c = Self::base(Family::CartesianVector, depth, width);
        c.vector_channels = Some(vector_channels_for(width));
        c
    }

    /// Width is derived as `C(ℓ_max+1)²`.
    pub fn spherical(depth: usize, channels: usize, l_max: usize, m_max: usize) -> Self {
        let mut c = Self::base(Family::SphericalTensor, depth, channels * (l_max + 1) * (l_max + 1));
        c.channels = Some(channels);
        c.l_max = Some(l_max);
        c.m_max = Some(m_max);
        c
    }

    /// A family default at the given width (channels `C` for spherical tensors).
    pub fn for_family(family: Family, depth: usize, width: usize) -> Self {
        match family {
            Family::Unconstrained => Self::unconstrained(depth, width),
            Family::Directional => Self::directional(depth, width),
            Family::CartesianVector => Self::cartesian(depth, width),
            Family::SphericalTensor => Self::spherical(depth, width, 3, 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.width == 0 {
            return bad("depth and width must be positive".into());
        }
        if !(self.preset.cutoff > 0.0) || self.preset.k_max == 0 {
            return bad("cutoff must be positive and k_max at least 1".into());
        }
        if self.n_radial == 0 || self.elements.is_empty() {
            return bad("radial basis and element palette must be non-empty".into());
        }
        let mut sorted = self.elements.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.elements.len() {
            return bad("element palette has duplicates".into());
        }
        match self.family {
            Family::CartesianVector => match self.vector_channels {
                None | Some(0) => bad("cartesian-vector needs vector_channels ≥ 1".into()),
                Some(_) => Ok(()),
            },
            Family::SphericalTensor => {
                let (Some(c), Some(l), Some(m)) = (self.channels, self.l_max, self.m_max) else {
                    return bad("spherical-tensor needs channels, l_max and m_max".into());
                };
                if c == 0 {
                    return bad("channels must be positive".into());
                }
                if l > crate::so3::wigner::MAX_ORDER {
                    return bad(format!("l_max {l} exceeds {}", crate::so3::wigner::MAX_ORDER));
                }
                if m > l {
                    return bad(format!("m_max {m} exceeds l_max {l}"));
                }
                if self.width != c * (l + 1) * (l + 1) {
                    return bad(format!("width {} must equal C(ℓ_max+1)² = {}", self.width, c * (l + 1) * (l + 1)));
                }
                Ok(())
            }
            Family::Directional if self.n_angular == 0 => bad("directional needs an angular basis".into()),
            _ => Ok(()),
        }
    }

    /// Width of the scalar (invariant) channel.
    pub fn scalar_width(&self) -> usize {
        match self.family {
            Family::SphericalTensor => self.channels.unwrap_or(self.width),
            _ => self.width,
        }
    }

    pub fn element_row(&self, z: u32) -> Option<usize> {
        self.elements.iter().position(|&e| e == z)
    }
}

pub fn vector_channels_for(width: usize) -> usize {
    ((width as f64).sqrt().round() as usize).max(1)
}

/// Configs that share depth and differ in width only, at the family's saturation depth.
pub fn build_ladder(family: Family, widths: &[usize]) -> Result<Vec<ModelConfig>> {
    build_ladder_at_depth(family, widths, family.saturation_depth())
}

pub fn build_ladder_at_depth(family: Family, widths: &[usize], depth: usize) -> Result<Vec<ModelConfig>> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Config("ladder widths must be positive".into()));
    }
    widths
        .iter()
        .map(|&w| {
            let c = ModelConfig::for_family(family, depth, w);
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// `η(w) = η*·w_base/w`.
pub fn mup_lr_transfer(eta_base: f64, w_base: usize, w: usize) -> Result<f64> {
    if !(eta_base > 0.0) || w_base == 0 || w == 0 {
        return Err(Error::Config("learning rate and widths must be positive".into()));
    }
    Ok(eta_base * w_base as f64 / w as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartesian_channels_follow_sqrt_width() {
        let ladder = build_ladder(Family::CartesianVector, &[16, 64, 100, 256]).unwrap();
        let e: Vec<_> = ladder.iter().map(|c| c.vector_channels.unwrap()).collect();
        assert_eq!(e, vec![4, 8, 10, 16]);
        assert_eq!(ModelConfig::cartesian(2, 30).vector_channels, Some(5));
    }

    #[test]
    fn spherical_width_formula() {
        let c = ModelConfig::spherical(2, 4, 4, 2);
        assert_eq!(c.width, 100);
        c.validate().unwrap();
    }

    #[test]
    fn ladder_fixes_depth() {
        let ladder = build_ladder(Family::Unconstrained, &[32, 64, 128]).unwrap();
        assert!(ladder.iter().all(|c| c.depth == Family::Unconstrained.saturation_depth()));
        assert_eq!(ladder.iter().map(|c| c.width).collect::<Vec<_>>(), vec![32, 64, 128]);
    }

    #[test]
    fn missing_family_fields_rejected() {
        let mut c = ModelConfig::cartesian(2, 16);
        c.vector_channels = None;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut s = ModelConfig::spherical(2, 2, 2, 2);
        s.m_max = Some(3);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = ModelConfig::spherical(2, 2, 2, 2);
        s.width += 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(ModelConfig::directional(2, 8).preset, CutoffPreset { cutoff: 10.0, k_max: 50 });
        assert_eq!(ModelConfig::unconstrained(2, 8).preset, CutoffPreset { cutoff: 6.0, k_max: 30 });
    }

    #[test]
    fn lr_transfer() {
        assert_eq!(mup_lr_transfer(1e-3, 64, 64).unwrap(), 1e-3);
        assert!((mup_lr_transfer(1e-3, 64, 128).unwrap() - 5e-4).abs() < 1e-18);
        let prod: Vec<f64> = [32, 64, 256, 1024].iter().map(|&w| mup_lr_transfer(1e-3, 64, w).unwrap() * w as f64).collect();
        assert!(prod.iter().all(|p| (p - prod[0]).abs() < 1e-15));
        assert!(mup_lr_transfer(0.0, 1, 1).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }
}
