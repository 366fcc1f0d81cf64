//! Rotation-group machinery: harmonics, Wigner matrices, coupling coefficients.

pub mod clebsch;
pub mod frame;
pub mod harmonics;
pub mod irreps;
pub mod rotation;
pub mod wigner;

pub use clebsch::{clebsch_gordan, CGTable};
pub use frame::{edge_frame, EdgeFrame};
pub use harmonics::{real_spherical_harmonics, sh_dim, sh_index};
pub use irreps::{act_on_irreps, IrrepsTensor};
pub use rotation::{sample_rotation, Rotation, Vec3};
pub use wigner::{wigner_d, wigner_d_all, WignerD};
