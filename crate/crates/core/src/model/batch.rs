//! Disjoint union of systems with the per-edge geometry each family consumes.
//!
//! Geometric features are constants of the model (they depend on positions
//! only), so they are computed once here and their FLOPs are tallied from a
//! fixed cost table.

use crate::autodiff::{RowRotations, Tensor};
use crate::error::{Error, Result};
use crate::graph::{build_graph, AtomicSystem, NeighborGraph};
use crate::model::config::{Family, ModelConfig};
use crate::so3::frame::{edge_frame, EDGE_FRAME_FLOPS};
use crate::so3::rotation::{cross, dot, norm, Vec3};
use crate::so3::wigner::{wigner_d_all, wigner_flops};
use std::f64::consts::PI;
use std::sync::Arc;

/// Difference vector, squared norm, square root.
pub const EDGE_VECTOR_FLOPS: u64 = 9;
/// Cosine envelope.
pub const ENVELOPE_FLOPS: u64 = 4;
/// One Gaussian radial basis function.
pub const RADIAL_FLOPS_PER_BASIS: u64 = 4;
/// Raw geometry features `[r/c, |r|/c]`.
pub const RAW_FEATURE_FLOPS: u64 = 4;
/// Cosine of a bond angle from two edge vectors with known lengths.
pub const ANGLE_FLOPS: u64 = 8;
/// Cosine of a dihedral and the two sines that mask it.
pub const DIHEDRAL_FLOPS: u64 = 40;
/// One Chebyshev term `cos(kθ)` by recurrence.
pub const CHEBYSHEV_FLOPS: u64 = 3;

/// Below this sine product a triplet counts as collinear and its dihedral is masked.
const COLLINEAR_EPS: f64 = 1e-12;

/// Three-body and four-body index lists for the directional family.
#[derive(Debug, Clone)]
pub struct Triplets {
    /// Edge `u→v` of each triplet.
    pub edge: Arc<Vec<usize>>,
    /// Angle basis of `φ` and radial basis of `|r_kv|`, `[n_trip, n_angular + n_radial]`.
    pub features: Tensor,
    /// Edge `u→v` of each quadruplet.
    pub quad_edge: Arc<Vec<usize>>,
    /// Triplet `(u, v, k)` that each quadruplet extends.
    pub quad_triplet: Arc<Vec<usize>>,
    /// Masked dihedral basis and radial basis of `|r_jk|`, `[n_quad, n_angular + n_radial]`.
    pub quad_features: Tensor,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub n_atoms: usize,
    pub n_systems: usize,
    pub atom_system: Arc<Vec<usize>>,
    pub atoms_per_system: Vec<usize>,
    pub element_rows: Arc<Vec<usize>>,
    /// Positions, each system centered at its unweighted centroid.
    pub pos: Vec<Vec3>,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
    pub vec: Vec<Vec3>,
    pub dist: Vec<f64>,
    /// `1/|N(v)|` for the receiver of each edge, so scatter gives the neighbor mean.
    pub mean_weights: Arc<Vec<f64>>,
    pub envelope: Arc<Vec<f64>>,
    pub radial: Tensor,
    pub raw: Option<Tensor>,
    pub triplets: Option<Triplets>,
    pub rotations: Option<Arc<RowRotations>>,
    pub geometry_flops: u64,
    pub energies: Option<Vec<f64>>,
    pub forces: Option<Vec<Vec3>>,
}

impl Batch {
    /// Builds graphs with the config's preset and assembles the batch.
    pub fn new(systems: &[AtomicSystem], config: &ModelConfig) -> Result<Self> {
        let graphs = systems.iter().map(|s| build_graph(s, config.preset.cutoff, config.preset.k_max)).collect::<Result<Vec<_>>>()?;
        Self::from_graphs(systems, &graphs, config)
    }

    pub fn from_graphs(systems: &[AtomicSystem], graphs: &[NeighborGraph], config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if systems.is_empty() {
            return Err(Error::NoData("empty batch".into()));
        }
        if graphs.len() != systems.len() {
            return Err(Error::Shape("one graph per system required".into()));
        }
        let labeled = systems.iter().all(AtomicSystem::is_labeled);
        let mut b = Batch {
            n_atoms: 0,
            n_systems: systems.len(),
            atom_system: Arc::new(Vec::new()),
            atoms_per_system: Vec::with_capacity(systems.len()),
            element_rows: Arc::new(Vec::new()),
            pos: Vec::new(),
            src: Arc::new(Vec::new()),
            dst: Arc::new(Vec::new()),
            vec: Vec::new(),
            dist: Vec::new(),
            mean_weights: Arc::new(Vec::new()),
            envelope: Arc::new(Vec::new()),
            radial: Tensor::zeros(0, config.n_radial),
            raw: None,
            triplets: None,
            rotations: None,
            geometry_flops: 0,
            energies: labeled.then(Vec::new),
            forces: labeled.then(Vec::new),
        };
        let (mut atom_system, mut rows, mut src, mut dst) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (si, (sys, g)) in systems.iter().zip(graphs).enumerate() {
            sys.validate()?;
            if g.n_atoms != sys.n_atoms() {
                return Err(Error::Shape(format!("graph {si} has {} atoms, system has {}", g.n_atoms, sys.n_atoms())));
            }
            let off = b.n_atoms;
            let n = sys.n_atoms();
            let centroid = sys.pos.iter().fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]]);
            let centroid = centroid.map(|c| c / n as f64);
            for (&z, p) in sys.z.iter().zip(&sys.pos) {
                rows.push(config.element_row(z).ok_or_else(|| Error::Config(format!("element {z} has no embedding row")))?);
                b.pos.push([p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]]);
                atom_system.push(si);
            }
            for e in 0..g.n_edges() {
                if g.dist[e] == 0.0 {
                    return Err(Error::ZeroLengthEdge { src: g.src[e] + off, dst: g.dst[e] + off });
                }
                src.push(g.src[e] + off);
                dst.push(g.dst[e] + off);
                b.vec.push(g.vec[e]);
                b.dist.push(g.dist[e]);
            }
            if let (Some(es), Some(fs)) = (&mut b.energies, &mut b.forces) {
                es.push(sys.energy.expect("labeled"));
                fs.extend_from_slice(sys.forces.as_ref().expect("labeled"));
            }
            b.atoms_per_system.push(n);
            b.n_atoms += n;
        }
        let n_edges = src.len();
        let mut degree = vec![0usize; b.n_atoms];
        for &v in &dst {
            degree[v] += 1;
        }
        b.mean_weights = Arc::new(dst.iter().map(|&v| 1.0 / degree[v] as f64).collect());
        b.atom_system = Arc::new(atom_system);
        b.element_rows = Arc::new(rows);
        b.src = Arc::new(src);
        b.dst = Arc::new(dst);

        let c = config.preset.cutoff;
        b.envelope = Arc::new(b.dist.iter().map(|&d| cosine_envelope(d, c)).collect());
        b.radial = radial_basis(&b.dist, c, config.n_radial);
        let e = n_edges as u64;
        b.geometry_flops = e * (EDGE_VECTOR_FLOPS + ENVELOPE_FLOPS + RADIAL_FLOPS_PER_BASIS * config.n_radial as u64);

        match config.family {
            Family::Unconstrained => {
                let mut raw = Vec::with_capacity(n_edges * 4);
                for (r, d) in b.vec.iter().zip(&b.dist) {
                    raw.extend_from_slice(&[r[0] / c, r[1] / c, r[2] / c, d / c]);
                }
                b.raw = Some(Tensor::from_vec(n_edges, 4, raw));
                b.geometry_flops += e * RAW_FEATURE_FLOPS;
            }
            Family::Directional => {
                let (t, flops) = build_triplets(&b, config);
                b.triplets = Some(t);
                b.geometry_flops += flops;
            }
            Family::SphericalTensor => {
                let l_max = config.l_max.expect("validated");
                let channels = config.channels.expect("validated");
                let mut blocks = Vec::with_capacity(n_edges * RowRotations::block_len(l_max));
                for (i, r) in b.vec.iter().enumerate() {
                    let frame = edge_frame(*r).map_err(|_| Error::ZeroLengthEdge { src: b.src[i], dst: b.dst[i] })?;
                    for d in wigner_d_all(&frame.rotation, l_max) {
                        blocks.extend_from_slice(&d.matrix);
                    }
                }
                b.rotations = Some(Arc::new(RowRotations { l_max, channels, blocks }));
                b.geometry_flops += e * (EDGE_FRAME_FLOPS + wigner_flops(l_max));
            }
            Family::CartesianVector => {}
        }
        Ok(b)
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Atoms as tokens.
    pub fn tokens(&self) -> u64 {
        self.n_atoms as u64
    }
}

/// `½(cos(πd/c) + 1)` inside the cutoff, zero beyond.
pub fn cosine_envelope(d: f64, cutoff: f64) -> f64 {
    if d >= cutoff {
        0.0
    } else {
        0.5 * ((PI * d / cutoff).cos() + 1.0)
    }
}

/// Gaussians on an even grid over `[0, c]` with width equal to the spacing.
pub fn radial_basis(dist: &[f64], cutoff: f64, n: usize) -> Tensor {
    let spacing = if n > 1 { cutoff / (n - 1) as f64 } else { cutoff };
    let mut data = Vec::with_capacity(dist.len() * n);
    for &d in dist {
        for k in 0..n {
            let t = (d - k as f64 * spacing) / spacing;
            data.push((-t * t).exp());
        }
    }
    Tensor::from_vec(dist.len(), n, data)
}

/// Cosine of the angle at `v` between `v→u` and `v→k`, given `r_uv = x_u − x_v` and `r_kv`.
pub fn bond_angle_cos(r_uv: Vec3, r_kv: Vec3) -> f64 {
    (dot(r_uv, r_kv) / (norm(r_uv) * norm(r_kv))).clamp(-1.0, 1.0)
}

/// Unsigned angle between the planes `(u, v, k)` and `(v, k, j)`, as
/// `(cos ω, sin φ_uvk · sin φ_vkj)`. `None` when either triplet is collinear.
pub fn dihedral(r_uv: Vec3, r_kv: Vec3, r_jk: Vec3) -> Option<(f64, f64)> {
    let r_vk = [-r_kv[0], -r_kv[1], -r_kv[2]];
    let n1 = cross(r_kv, r_uv);
    let n2 = cross(r_jk, r_vk);
    let (a, b) = (norm(n1), norm(n2));
    let s1 = a / (norm(r_uv) * norm(r_kv));
    let s2 = b / (norm(r_jk) * norm(r_kv));
    if s1 * s2 < COLLINEAR_EPS {
        return None;
    }
    Some(((dot(n1, n2) / (a * b)).clamp(-1.0, 1.0), s1 * s2))
}

/// `[cos(0·θ), …, cos((n−1)·θ)]` from `cos θ`.
fn chebyshev(x: f64, n: usize, out: &mut Vec<f64>) {
    let (mut t0, mut t1) = (1.0, x);
    for k in 0..n {
        match k {
            0 => out.push(1.0),
            1 => out.push(x),
            _ => {
                let t2 = 2.0 * x * t1 - t0;
                out.push(t2);
                t0 = t1;
                t1 = t2;
            }
        }
    }
}

fn build_triplets(b: &Batch, config: &ModelConfig) -> (Triplets, u64) {
    let (na, nr) = (config.n_angular, config.n_radial);
    let short = |e: usize| b.dist[e] <= config.angle_cutoff;
    let mut incoming = vec![Vec::new(); b.n_atoms];
    for e in 0..b.n_edges() {
        if short(e) {
            incoming[b.dst[e]].push(e);
        }
    }
    let (mut t_edge, mut t_feat, mut t_other) = (Vec::new(), Vec::new(), Vec::new());
    for e in 0..b.n_edges() {
        if !short(e) {
            continue;
        }
        let (u, v) = (b.src[e], b.dst[e]);
        for &ek in &incoming[v] {
            if b.src[ek] == u {
                continue;
            }
            t_edge.push(e);
            t_other.push(ek);
            chebyshev(bond_angle_cos(b.vec[e], b.vec[ek]), na, &mut t_feat);
            t_feat.extend_from_slice(b.radial.row(ek));
        }
    }
    let (mut q_edge, mut q_trip, mut q_feat) = (Vec::new(), Vec::new(), Vec::new());
    for (t, (&e, &ek)) in t_edge.iter().zip(&t_other).enumerate() {
        let (u, v, k) = (b.src[e], b.dst[e], b.src[ek]);
        for &ej in &incoming[k] {
            let j = b.src[ej];
            if j == u || j == v {
                continue;
            }
            q_edge.push(e);
            q_trip.push(t);
            match dihedral(b.vec[e], b.vec[ek], b.vec[ej]) {
                Some((cos_w, mask)) => {
                    let start = q_feat.len();
                    chebyshev(cos_w, na, &mut q_feat);
                    for x in &mut q_feat[start..] {
                        *x *= mask;
                    }
                }
                None => q_feat.extend(std::iter::repeat_n(0.0, na)),
            }
            q_feat.extend_from_slice(b.radial.row(ej));
        }
    }
    let n_trip = t_edge.len();
    let n_quad = q_edge.len();
    let flops = n_trip as u64 * (ANGLE_FLOPS + CHEBYSHEV_FLOPS * na as u64) + n_quad as u64 * (DIHEDRAL_FLOPS + (CHEBYSHEV_FLOPS + 1) * na as u64);
    let t = Triplets {
        edge: Arc::new(t_edge),
        features: Tensor::from_vec(n_trip, na + nr, t_feat),
        quad_edge: Arc::new(q_edge),
        quad_triplet: Arc::new(q_trip),
        quad_features: Tensor::from_vec(n_quad, na + nr, q_feat),
    };
    (t, flops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> AtomicSystem {
        // u=0, v=1, k=2, j=3: right angles at v and k, planes perpendicular.
        AtomicSystem::new(vec![6; 4], vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 1.0]]).unwrap()
    }

    #[test]
    fn analytic_angles_on_a_chain() {
        let p = chain().pos;
        let r = |a: usize, b: usize| crate::so3::rotation::sub(p[a], p[b]);
        assert!(bond_angle_cos(r(0, 1), r(2, 1)).abs() < 1e-15);
        let (cos_w, mask) = dihedral(r(0, 1), r(2, 1), r(3, 2)).unwrap();
        assert!(cos_w.abs() < 1e-15 && (mask - 1.0).abs() < 1e-15);
        // Planar trans chain: ω = π.
        let q = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 1.0, 0.0]];
        let rq = |a: usize, b: usize| crate::so3::rotation::sub(q[a], q[b]);
        let (cw, _) = dihedral(rq(0, 1), rq(2, 1), rq(3, 2)).unwrap();
        assert!((cw + 1.0).abs() < 1e-15);
        // A 60° bend: cos φ = 1/2.
        let h = 3f64.sqrt() / 2.0;
        assert!((bond_angle_cos([1.0, 0.0, 0.0], [0.5, h, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dihedral_matches_torsion_formula() {
        // Rotating the last atom about the v–k axis by θ from the cis position gives ω = θ.
        for deg in [10.0f64, 45.0, 90.0, 135.0, 170.0] {
            let t = deg.to_radians();
            let p = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.5, 0.0], [t.cos(), 1.5, t.sin()]];
            let r = |a: usize, b: usize| crate::so3::rotation::sub(p[a], p[b]);
            let (cw, _) = dihedral(r(0, 1), r(2, 1), r(3, 2)).unwrap();
            assert!((cw - t.cos()).abs() < 1e-12, "{deg}: {cw}");
        }
    }

    #[test]
    fn linear_triatomic_is_masked() {
        let sys = AtomicSystem::new(vec![6; 4], vec![[-1.2, 0.0, 0.0], [0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [1.2, 1.0, 0.0]]).unwrap();
        let p = &sys.pos;
        let r = |a: usize, b: usize| crate::so3::rotation::sub(p[a], p[b]);
        assert!((bond_angle_cos(r(0, 1), r(2, 1)) + 1.0).abs() < 1e-15);
        assert!(dihedral(r(0, 1), r(2, 1), r(3, 2)).is_none());
        let b = Batch::new(&[sys], &ModelConfig::directional(1, 4)).unwrap();
        let t = b.triplets.unwrap();
        assert!(t.quad_features.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn union_offsets_and_mean_weights() {
        let a = AtomicSystem::new(vec![1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let c = chain();
        let b = Batch::new(&[a, c], &ModelConfig::unconstrained(1, 4)).unwrap();
        assert_eq!(b.n_atoms, 6);
        assert_eq!(b.atoms_per_system, vec![2, 4]);
        assert!(b.src[2..].iter().all(|&u| u >= 2));
        for v in 0..b.n_atoms {
            let s: f64 = (0..b.n_edges()).filter(|&e| b.dst[e] == v).map(|e| b.mean_weights[e]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        let centroid: f64 = b.pos[2..].iter().map(|p| p[0] + p[1] + p[2]).sum();
        assert!(centroid.abs() < 1e-12);
    }

    #[test]
    fn unknown_element_is_config_error() {
        let s = AtomicSystem::new(vec![92], vec![[0.0; 3]]).unwrap();
        assert!(matches!(Batch::new(&[s], &ModelConfig::unconstrained(1, 4)), Err(Error::Config(_))));
    }

    #[test]
    fn envelope_vanishes_at_cutoff() {
        assert_eq!(cosine_envelope(6.0, 6.0), 0.0);
        assert!((cosine_envelope(0.0, 6.0) - 1.0).abs() < 1e-15);
        assert!(cosine_envelope(5.999, 6.0) < 1e-6);
    }

    #[test]
    fn chebyshev_terms() {
        let mut v = Vec::new();
        let t = 0.7f64;
        chebyshev(t.cos(), 5, &mut v);
        for (k, x) in v.iter().enumerate() {
            assert!((x - (k as f64 * t).cos()).abs() < 1e-14);
        }
    }
}
