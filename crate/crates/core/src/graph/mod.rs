//! Atomic systems, radius graphs, and label normalization.

pub mod io;

use crate::error::{Error, Result};
use crate::so3::rotation::{norm, sub, Vec3};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A molecule: atomic numbers, positions in Å, optional energy (eV) and forces (eV/Å).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSystem {
    pub z: Vec<u32>,
    pub pos: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forces: Option<Vec<Vec3>>,
}

impl AtomicSystem {
    pub fn new(z: Vec<u32>, pos: Vec<Vec3>) -> Result<Self> {
        let s = Self { z, pos, energy: None, forces: None };
        s.validate()?;
        Ok(s)
    }

    pub fn labeled(z: Vec<u32>, pos: Vec<Vec3>, energy: f64, forces: Vec<Vec3>) -> Result<Self> {
        let s = Self { z, pos, energy: Some(energy), forces: Some(forces) };
        s.validate()?;
        Ok(s)
    }

    pub fn n_atoms(&self) -> usize {
        self.z.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.energy.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSystem(m.to_string()));
        if self.z.is_empty() {
            return bad("system has no atoms");
        }
        if self.z.contains(&0) {
            return bad("atomic numbers must be positive");
        }
        if self.pos.len() != self.z.len() {
            return bad("positions and atomic numbers differ in length");
        }
        if self.pos.iter().flatten().any(|x| !x.is_finite()) {
            return bad("non-finite position");
        }
        match (&self.energy, &self.forces) {
            (None, None) => Ok(()),
            (Some(e), Some(f)) => {
                if !e.is_finite() {
                    return bad("non-finite energy");
                }
                if f.len() != self.z.len() {
                    return bad("forces and atomic numbers differ in length");
                }
                if f.iter().flatten().any(|x| !x.is_finite()) {
                    return bad("non-finite force");
                }
                Ok(())
            }
            _ => bad("energy and forces must be given together"),
        }
    }

    /// Rotates positions and forces; energy is unchanged.
    pub fn rotated(&self, r: &crate::so3::Rotation) -> Self {
        Self {
            z: self.z.clone(),
            pos: self.pos.iter().map(|p| r.apply(*p)).collect(),
            energy: self.energy,
            forces: self.forces.as_ref().map(|f| f.iter().map(|v| r.apply(*v)).collect()),
        }
    }
}

/// Total atom count of a collection; atoms are the token unit.
pub fn token_count(systems: &[AtomicSystem]) -> u64 {
    systems.iter().map(|s| s.n_atoms() as u64).sum()
}

/// Directed edges `u → v` with `r_uv = x_u − x_v`, grouped by receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub n_atoms: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub vec: Vec<Vec3>,
    pub dist: Vec<f64>,
}

impl NeighborGraph {
    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// In-degree of every atom.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_atoms];
        for &v in &self.dst {
            d[v] += 1;
        }
        d
    }

    /// Edge indices arriving at each atom.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_atoms];
        for (e, &v) in self.dst.iter().enumerate() {
            out[v].push(e);
        }
        out
    }
}

/// Connects every pair within `cutoff`, keeping at most `k_max` nearest
/// senders per receiver (equal distances: lower sender index first).
pub fn build_graph(system: &AtomicSystem, cutoff: f64, k_max: usize) -> Result<NeighborGraph> {
    if !(cutoff > 0.0) || k_max == 0 {
        return Err(Error::Config(format!("cutoff {cutoff} and k_max {k_max} must be positive")));
    }
    let n = system.n_atoms();
    let mut g = NeighborGraph { n_atoms: n, src: vec![], dst: vec![], vec: vec![], dist: vec![] };
    for v in 0..n {
        let mut cands: Vec<(f64, usize, Vec3)> = (0..n)
            .filter(|&u| u != v)
            .filter_map(|u| {
                let r = sub(system.pos[u], system.pos[v]);
                let d = norm(r);
                (d <= cutoff).then_some((d, u, r))
            })
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.truncate(k_max);
        cands.sort_by_key(|c| c.1);
        for (d, u, r) in cands {
            if d == 0.0 {
                return Err(Error::ZeroLengthEdge { src: u, dst: v });
            }
            g.src.push(u);
            g.dst.push(v);
            g.vec.push(r);
            g.dist.push(d);
        }
    }
    Ok(g)
}

/// Translates positions so the unweighted centroid is at the origin.
pub fn center_of_mass_center(system: &AtomicSystem) -> AtomicSystem {
    let n = system.n_atoms() as f64;
    let mut c = [0.0; 3];
    for p in &system.pos {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let mut out = system.clone();
    for p in &mut out.pos {
        *p = sub(*p, c);
    }
    out
}

/// Per-element energy references plus mean and spread of referenced energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu: f64,
    pub sigma: f64,
    pub per_element_refs: BTreeMap<u32, f64>,
}

impl NormalizationStats {
    /// Composition baseline `Σ_i ref(z_i)`.
    pub fn reference_energy(&self, z: &[u32]) -> f64 {
        z.iter().map(|zi| self.per_element_refs.get(zi).copied().unwrap_or(0.0)).sum()
    }

    pub fn referenced(&self, system: &AtomicSystem) -> Option<f64> {
        system.energy.map(|e| e - self.reference_energy(&system.z))
    }
}

/// Least-squares fit of energies on element counts, then `μ`, `σ` of the residuals.
pub fn fit_energy_reference(train: &[AtomicSystem]) -> Result<NormalizationStats> {
    let labeled: Vec<&AtomicSystem> = train.iter().filter(|s| s.is_labeled()).collect();
    if labeled.len() < 2 {
        return Err(Error::InvalidSystem("need at least two labeled systems".into()));
    }
    let elements: Vec<u32> = {
        let mut e: Vec<u32> = labeled.iter().flat_map(|s| s.z.iter().copied()).collect();
        e.sort_unstable();
        e.dedup();
        e
    };
    let col = |z: u32| elements.binary_search(&z).expect("element present");
    let a = DMatrix::from_fn(labeled.len(), elements.len(), |i, j| labeled[i].z.iter().filter(|&&z| col(z) == j).count() as f64);
    let y = DVector::from_iterator(labeled.len(), labeled.iter().map(|s| s.energy.unwrap()));

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (labeled.len().max(elements.len()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < elements.len() {
        let v_t = svd.v_t.as_ref().expect("right singular vectors");
        let mut degenerate = Vec::new();
        for (j, &z) in elements.iter().enumerate() {
            let involved = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] <= tol).any(|k| v_t[(k, j)].abs() > 1e-8)
                || svd.singular_values.len() < elements.len();
            if involved {
                degenerate.push(z);
            }
        }
        return Err(Error::RankDeficient { elements: degenerate });
    }
    let coef = svd.solve(&y, tol).map_err(|e| Error::FitFailed(format!("composition regression: {e}")))?;
    let per_element_refs: BTreeMap<u32, f64> = elements.iter().enumerate().map(|(j, &z)| (z, coef[j])).collect();
    let resid: Vec<f64> = (0..labeled.len()).map(|i| y[i] - (a.row(i) * &coef)[0]).collect();
    let m = resid.len() as f64;
    let mu = resid.iter().sum::<f64>() / m;
    let sigma = (resid.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / m).sqrt();
    Ok(NormalizationStats { mu, sigma, per_element_refs })
}

/// `e' = (e − ref − μ)/σ`, `f' = f/σ`.
pub fn normalize_labels(system: &AtomicSystem, stats: &NormalizationStats) -> Result<AtomicSystem> {
    if stats.sigma == 0.0 {
        return Err(Error::ZeroScale);
    }
    let mut out = system.clone();
    out.energy = stats.referenced(system).map(|e| (e - stats.mu) / stats.sigma);
    out.forces = system.forces.as_ref().map(|f| f.iter().map(|v| crate::so3::rotation::scale(*v, 1.0 / stats.sigma)).collect());
    Ok(out)
}

/// Maps a normalized energy and forces back to eV and eV/Å.
pub fn denormalize_predictions(z: &[u32], energy: f64, forces: &[Vec3], stats: &NormalizationStats) -> Result<(f64, Vec<Vec3>)> {
    if stats.sigma == 0.0 {
        return Err(Error::ZeroScale);
    }
    let e = energy * stats.sigma + stats.mu + stats.reference_energy(z);
    let f = forces.iter().map(|v| crate::so3::rotation::scale(*v, stats.sigma)).collect();
    Ok((e, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::rotation::sample_rotation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys(pos: Vec<Vec3>) -> AtomicSystem {
        AtomicSystem::new(vec![1; pos.len()], pos).unwrap()
    }

    #[test]
    fn two_atoms_within_cutoff() {
        let g = build_graph(&sys(vec![[0.0; 3], [3.0, 0.0, 0.0]]), 6.0, 30).unwrap();
        let mut e: Vec<_> = g.src.iter().zip(&g.dst).map(|(&u, &v)| (u, v)).collect();
        e.sort();
        assert_eq!(e, vec![(0, 1), (1, 0)]);
        assert_eq!(g.vec[0], [3.0, 0.0, 0.0]);
    }

    #[test]
    fn two_atoms_beyond_cutoff() {
        let g = build_graph(&sys(vec![[0.0; 3], [7.0, 0.0, 0.0]]), 6.0, 30).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn cap_keeps_nearest_by_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pos = vec![[0.0; 3]];
        for _ in 0..31 {
            let d = rng.random_range(1.0..5.5);
            let r = sample_rotation(&mut rng).apply([d, 0.0, 0.0]);
            pos.push(r);
        }
        let s = sys(pos.clone());
        let g = build_graph(&s, 6.0, 30).unwrap();
        let kept: Vec<usize> = g.src.iter().zip(&g.dst).filter(|(_, &v)| v == 0).map(|(&u, _)| u).collect();
        let mut oracle: Vec<(f64, usize)> = (1..32).map(|u| (norm(pos[u]), u)).collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<usize> = oracle[..30].iter().map(|p| p.1).collect();
        want.sort();
        assert_eq!(kept, want);
    }

    #[test]
    fn cap_tie_prefers_lower_index() {
        let s = sys(vec![[0.0; 3], [0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 2.0]]);
        let g = build_graph(&s, 6.0, 2).unwrap();
        let kept: Vec<usize> = g.src.iter().zip(&g.dst).filter(|(_, &v)| v == 0).map(|(&u, _)| u).collect();
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn centering_examples() {
        let c = center_of_mass_center(&sys(vec![[2.0, 0.0, 0.0], [0.0; 3]]));
        assert_eq!(c.pos, vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let s = sys(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(center_of_mass_center(&s).pos, s.pos);
    }

    #[test]
    fn centering_keeps_forces() {
        let s = AtomicSystem::labeled(vec![1, 6], vec![[3.0, 1.0, 0.0], [0.0; 3]], -1.0, vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        let c = center_of_mass_center(&s);
        assert_eq!(c.forces, s.forces);
        assert_eq!(c.energy, s.energy);
    }

    #[test]
    fn single_element_reference() {
        let systems: Vec<AtomicSystem> =
            (1..5).map(|n| AtomicSystem::labeled(vec![6; n], vec![[0.0; 3]; n], -2.5 * n as f64, vec![[0.0; 3]; n]).unwrap()).collect();
        let stats = fit_energy_reference(&systems).unwrap();
        assert!((stats.per_element_refs[&6] + 2.5).abs() < 1e-12);
        for s in &systems {
            assert!(stats.referenced(s).unwrap().abs() < 1e-12);
        }
        assert!(matches!(normalize_labels(&systems[0], &stats), Err(Error::ZeroScale)));
    }

    #[test]
    fn mean_and_spread_of_referenced_energies() {
        // Same composition so the reference absorbs the mean; residuals ±1.
        let mk = |e: f64| AtomicSystem::labeled(vec![1], vec![[0.0; 3]], e, vec![[0.0; 3]]).unwrap();
        let stats = fit_energy_reference(&[mk(0.0), mk(2.0)]).unwrap();
        assert!((stats.per_element_refs[&1] - 1.0).abs() < 1e-12);
        assert!(stats.mu.abs() < 1e-12 && (stats.sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_elements() {
        // H and C always appear together in equal numbers.
        let systems: Vec<AtomicSystem> = (1..4)
            .map(|n| {
                let mut z = vec![1; n];
                z.extend(vec![6; n]);
                z.push(8);
                z.push(8);
                AtomicSystem::labeled(z.clone(), vec![[0.0; 3]; z.len()], n as f64, vec![[0.0; 3]; z.len()]).unwrap()
            })
            .collect();
        match fit_energy_reference(&systems) {
            Err(Error::RankDeficient { elements }) => assert_eq!(elements, vec![1, 6]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recovers_linear_composition_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = [(1u32, -0.5), (6, -3.0), (8, -4.5)];
        let systems: Vec<AtomicSystem> = (0..200)
            .map(|_| {
                let n = rng.random_range(2..10);
                let z: Vec<u32> = (0..n).map(|_| truth[rng.random_range(0..3)].0).collect();
                let e: f64 = z.iter().map(|zi| truth.iter().find(|t| t.0 == *zi).unwrap().1).sum::<f64>() + 0.01 * (rng.random::<f64>() - 0.5);
                AtomicSystem::labeled(z, vec![[0.0; 3]; n], e, vec![[0.0; 3]; n]).unwrap()
            })
            .collect();
        let stats = fit_energy_reference(&systems).unwrap();
        for (z, c) in truth {
            assert!((stats.per_element_refs[&z] - c).abs() < 0.01);
        }
        let normed: Vec<f64> = systems.iter().map(|s| normalize_labels(s, &stats).unwrap().energy.unwrap()).collect();
        let m = normed.iter().sum::<f64>() / normed.len() as f64;
        let v = normed.iter().map(|x| (x - m).powi(2)).sum::<f64>() / normed.len() as f64;
        assert!(m.abs() < 1e-8 && (v.sqrt() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn normalization_arithmetic() {
        let stats = NormalizationStats { mu: 3.0, sigma: 2.0, per_element_refs: BTreeMap::from([(1, 0.0)]) };
        let s = AtomicSystem::labeled(vec![1], vec![[0.0; 3]], 3.0, vec![[2.0, 0.0, 0.0]]).unwrap();
        let n = normalize_labels(&s, &stats).unwrap();
        assert_eq!(n.energy, Some(0.0));
        assert_eq!(n.forces.unwrap()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_invalid_systems() {
        assert!(AtomicSystem::new(vec![], vec![]).is_err());
        assert!(AtomicSystem::new(vec![0], vec![[0.0; 3]]).is_err());
        assert!(AtomicSystem::new(vec![1], vec![[f64::NAN, 0.0, 0.0]]).is_err());
        let half = AtomicSystem { z: vec![1], pos: vec![[0.0; 3]], energy: Some(1.0), forces: None };
        assert!(half.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalization_roundtrip(e in -100.0..100.0f64, fx in -10.0..10.0f64, mu in -5.0..5.0f64, sigma in 0.1..10.0f64) {
            let stats = NormalizationStats { mu, sigma, per_element_refs: BTreeMap::from([(6, -1.5)]) };
            let s = AtomicSystem::labeled(vec![6, 6], vec![[0.0; 3], [1.0, 0.0, 0.0]], e, vec![[fx, 0.0, 0.0], [-fx, 0.0, 0.0]]).unwrap();
            let n = normalize_labels(&s, &stats).unwrap();
            let (e2, f2) = denormalize_predictions(&s.z, n.energy.unwrap(), n.forces.as_ref().unwrap(), &stats).unwrap();
            prop_assert!((e2 - e).abs() < 1e-10);
            prop_assert!((f2[0][0] - fx).abs() < 1e-10);
        }

        #[test]
        fn graph_topology_and_vectors_rotate(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..16);
            let pos: Vec<Vec3> = (0..n).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
            let s = sys(pos);
            let r = sample_rotation(&mut rng);
            let g = build_graph(&s, 6.0, 30).unwrap();
            let gr = build_graph(&s.rotated(&r), 6.0, 30).unwrap();
            prop_assert_eq!(&g.src, &gr.src);
            prop_assert_eq!(&g.dst, &gr.dst);
            for e in 0..g.n_edges() {
                prop_assert!((g.dist[e] - gr.dist[e]).abs() < 1e-10);
                let rv = r.apply(g.vec[e]);
                for k in 0..3 {
                    prop_assert!((rv[k] - gr.vec[e][k]).abs() < 1e-10);
                }
                let recomputed = sub(s.pos[g.src[e]], s.pos[g.dst[e]]);
                prop_assert!(norm(sub(recomputed, g.vec[e])) < 1e-12);
                prop_assert!(g.dist[e] <= 6.0 && g.src[e] != g.dst[e]);
            }
            prop_assert!(g.in_degree().iter().all(|&d| d <= 30));
        }

        #[test]
        fn centering_zeroes_centroid(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..20);
            let pos: Vec<Vec3> = (0..n).map(|_| [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)]).collect();
            let c = center_of_mass_center(&sys(pos));
            for k in 0..3 {
                let m: f64 = c.pos.iter().map(|p| p[k]).sum::<f64>() / n as f64;
                prop_assert!(m.abs() < 1e-12);
            }
        }
    }
}
