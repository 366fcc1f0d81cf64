//! Synthetic Lennard-Jones molecules with exact analytic labels.

use crate::graph::{token_count, AtomicSystem};
use crate::so3::rotation::{dot, norm, sub, Vec3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-element Lennard-Jones parameters; pairs mix by Lorentz–Berthelot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementParams {
    pub z: u32,
    /// Å
    pub sigma: f64,
    /// eV
    pub epsilon: f64,
}

/// Pairwise potential with a C² switch between `switch_on` and `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPotentialSpec {
    pub elements: Vec<ElementParams>,
    pub switch_on: f64,
    pub cutoff: f64,
    pub min_atoms: usize,
    pub max_atoms: usize,
    pub relax_steps: usize,
    pub jitter: f64,
}

impl Default for ToyPotentialSpec {
    fn default() -> Self {
        Self {
            elements: vec![
                ElementParams { z: 1, sigma: 2.0, epsilon: 0.02 },
                ElementParams { z: 6, sigma: 2.6, epsilon: 0.06 },
                ElementParams { z: 7, sigma: 2.4, epsilon: 0.05 },
                ElementParams { z: 8, sigma: 2.2, epsilon: 0.04 },
            ],
            switch_on: 5.0,
            cutoff: 6.0,
            min_atoms: 4,
            max_atoms: 24,
            relax_steps: 8,
            jitter: 0.08,
        }
    }
}

impl ToyPotentialSpec {
    fn params(&self, z: u32) -> ElementParams {
        *self.elements.iter().find(|e| e.z == z).expect("element in palette")
    }

    /// Mixed `(σ, ε)` for a pair of elements.
    pub fn pair(&self, zi: u32, zj: u32) -> (f64, f64) {
        let (a, b) = (self.params(zi), self.params(zj));
        (0.5 * (a.sigma + b.sigma), (a.epsilon * b.epsilon).sqrt())
    }

    /// Pair energy and its radial derivative.
    pub fn pair_energy(&self, zi: u32, zj: u32, r: f64) -> (f64, f64) {
        if r >= self.cutoff {
            return (0.0, 0.0);
        }
        let (sigma, eps) = self.pair(zi, zj);
        let s6 = (sigma / r).powi(6);
        let v = 4.0 * eps * (s6 * s6 - s6);
        let dv = 4.0 * eps * (-12.0 * s6 * s6 + 6.0 * s6) / r;
        let (s, ds) = self.switch(r);
        (v * s, dv * s + v * ds)
    }

    fn switch(&self, r: f64) -> (f64, f64) {
        if r <= self.switch_on {
            return (1.0, 0.0);
        }
        let w = self.cutoff - self.switch_on;
        let x = (r - self.switch_on) / w;
        let s = 1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
        let ds = -30.0 * x * x * (1.0 - x) * (1.0 - x) / w;
        (s, ds)
    }

    /// Total energy and forces `f_i = −∂E/∂x_i`.
    pub fn energy_forces(&self, z: &[u32], pos: &[Vec3]) -> (f64, Vec<Vec3>) {
        let n = z.len();
        let mut e = 0.0;
        let mut f = vec![[0.0; 3]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let r = sub(pos[i], pos[j]);
                let d = norm(r);
                let (v, dv) = self.pair_energy(z[i], z[j], d);
                e += v;
                for k in 0..3 {
                    let g = dv * r[k] / d;
                    f[i][k] -= g;
                    f[j][k] += g;
                }
            }
        }
        (e, f)
    }
}

/// Generates `n_systems` labeled molecules; system `i` draws from its own
/// ChaCha stream, so output is independent of thread count.
pub fn generate(spec: &ToyPotentialSpec, n_systems: usize, seed: u64) -> (Vec<AtomicSystem>, u64) {
    let systems: Vec<AtomicSystem> = (0..n_systems)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            generate_one(spec, &mut rng)
        })
        .collect();
    let tokens = token_count(&systems);
    (systems, tokens)
}

fn generate_one(spec: &ToyPotentialSpec, rng: &mut ChaCha8Rng) -> AtomicSystem {
    loop {
        let n = rng.random_range(spec.min_atoms..=spec.max_atoms);
        let z: Vec<u32> = (0..n).map(|_| spec.elements[rng.random_range(0..spec.elements.len())].z).collect();
        let mut pos = place(spec, &z, rng);
        relax(spec, &z, &mut pos);
        let noise = Normal::new(0.0, spec.jitter).expect("valid jitter");
        for p in &mut pos {
            for x in p.iter_mut() {
                *x += noise.sample(rng);
            }
        }
        if min_separation_ok(spec, &z, &pos, 0.8) {
            let (e, f) = spec.energy_forces(&z, &pos);
            return AtomicSystem::labeled(z, pos, e, f).expect("generated system is valid");
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let n = norm(v);
        if n > 1e-9 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Grows a cluster by attaching each atom near the pair minimum of a random
/// existing atom, rejecting placements that overlap any other atom.
fn place(spec: &ToyPotentialSpec, z: &[u32], rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut pos: Vec<Vec3> = vec![[0.0; 3]];
    for i in 1..z.len() {
        let mut stretch = 1.0;
        'attempt: loop {
            for _ in 0..50 {
                let anchor = rng.random_range(0..i);
                let (sigma, _) = spec.pair(z[i], z[anchor]);
                let d = 2f64.powf(1.0 / 6.0) * sigma * stretch * rng.random_range(0.95..1.15);
                let u = random_unit(rng);
                let p = [pos[anchor][0] + d * u[0], pos[anchor][1] + d * u[1], pos[anchor][2] + d * u[2]];
                let clear = (0..i).all(|j| norm(sub(p, pos[j])) >= 0.95 * spec.pair(z[i], z[j]).0);
                if clear {
                    pos.push(p);
                    break 'attempt;
                }
            }
            stretch *= 1.1;
        }
    }
    pos
}

const RELAX_STEP: f64 = 0.5; // Å²/eV
const RELAX_MAX_MOVE: f64 = 0.1; // Å

/// A few steepest-descent steps with capped per-atom displacement.
fn relax(spec: &ToyPotentialSpec, z: &[u32], pos: &mut [Vec3]) {
    for _ in 0..spec.relax_steps {
        let (_, f) = spec.energy_forces(z, pos);
        for (p, fi) in pos.iter_mut().zip(&f) {
            let mut d = [fi[0] * RELAX_STEP, fi[1] * RELAX_STEP, fi[2] * RELAX_STEP];
            let m = dot(d, d).sqrt();
            if m > RELAX_MAX_MOVE {
                d = [d[0] * RELAX_MAX_MOVE / m, d[1] * RELAX_MAX_MOVE / m, d[2] * RELAX_MAX_MOVE / m];
            }
            for k in 0..3 {
                p[k] += d[k];
            }
        }
    }
}

fn min_separation_ok(spec: &ToyPotentialSpec, z: &[u32], pos: &[Vec3], factor: f64) -> bool {
    (0..z.len()).all(|i| ((i + 1)..z.len()).all(|j| norm(sub(pos[i], pos[j])) >= factor * spec.pair(z[i], z[j]).0))
}

/// Train/validation partition with token counts.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<AtomicSystem>,
    pub validation: Vec<AtomicSystem>,
    pub train_tokens: u64,
    pub validation_tokens: u64,
}

/// Seeded disjoint split; both halves keep the original order.
pub fn split(dataset: &[AtomicSystem], val_fraction: f64, seed: u64) -> crate::Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(crate::Error::Config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let n = dataset.len();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.clamp(usize::from(n > 1), n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; n];
    for i in sample(&mut rng, n, n_val) {
        is_val[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (s, v) in dataset.iter().zip(is_val) {
        if v {
            validation.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok(Split { train_tokens: token_count(&train), validation_tokens: token_count(&validation), train, validation })
}

/// The first `round(r·len)` systems; fractions of one stream are nested.
pub fn prefix_fraction(systems: &[AtomicSystem], r: f64) -> &[AtomicSystem] {
    let k = ((systems.len() as f64) * r.clamp(0.0, 1.0)).round() as usize;
    &systems[..k]
}
