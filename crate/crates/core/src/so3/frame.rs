//! Rotations that align an edge direction with the `y` axis.

use crate::error::{Error, Result};
use crate::so3::rotation::{cross, dot, norm, Rotation, Vec3};

/// Rotation carrying a unit edge direction onto `(0, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFrame {
    pub rotation: Rotation,
}

const FLIP_X: Rotation = Rotation::from_rows([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]);

/// Builds the edge frame for `r_uv`.
///
/// Directions within the cap `r̂·ŷ ≥ -0.9` use the minimal rotation about
/// `r̂ × ŷ`. Directions near `-ŷ` are first turned by π about `x` and then
/// aligned minimally, so `(0, -1, 0)` maps through a pure half-turn about `x`.
pub fn edge_frame(r_uv: Vec3) -> Result<EdgeFrame> {
    let n = norm(r_uv);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroLengthEdge { src: 0, dst: 0 });
    }
    let u = [r_uv[0] / n, r_uv[1] / n, r_uv[2] / n];
    let rotation = if u[1] < -0.9 { minimal_to_y(FLIP_X.apply(u)) * FLIP_X } else { minimal_to_y(u) };
    Ok(EdgeFrame { rotation })
}

/// Rodrigues rotation taking unit `u` to `ŷ`; requires `u·ŷ > -1`.
fn minimal_to_y(u: Vec3) -> Rotation {
    let y = [0.0, 1.0, 0.0];
    let v = cross(u, y);
    let c = dot(u, y);
    let k = 1.0 / (1.0 + c);
    let vx = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sq: f64 = (0..3).map(|t| vx[i][t] * vx[t][j]).sum();
            m[i][j] = if i == j { 1.0 } else { 0.0 } + vx[i][j] + k * sq;
        }
    }
    Rotation::from_matrix_unchecked(m)
}

/// Tabulated cost in FLOPs of one [`edge_frame`] call.
pub const EDGE_FRAME_FLOPS: u64 = 60;
