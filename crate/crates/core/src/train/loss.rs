//! Per-atom energy and force error, and its rotation-averaged variant.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::AtomicSystem;
use crate::model::{predict, Batch, ForwardOutput, ModelState, Prediction};
use crate::so3::rotation::{sample_rotation, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Rotated copies averaged into the loss, and their weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub samples: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda_e: f64,
    pub lambda_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetry: Option<SymmetrySpec>,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { lambda_e: 1.0, lambda_f: 1.0, symmetry: None }
    }
}

impl LossSpec {
    /// Equal energy and force weights with `M` rotated copies at weight 1.
    pub fn with_symmetry(samples: usize) -> Self {
        Self { symmetry: Some(SymmetrySpec { samples, weight: 1.0 }), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_e > 0.0 && self.lambda_f > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if let Some(s) = self.symmetry {
            if s.samples == 0 || !(s.weight >= 0.0) {
                return Err(Error::Config("symmetry loss needs M ≥ 1 and a non-negative weight".into()));
            }
        }
        Ok(())
    }

    /// Rotated copies per system (0 when the symmetry term is off).
    pub fn symmetry_samples(&self) -> usize {
        self.symmetry.map_or(0, |s| s.samples)
    }
}

fn dist3(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `(λe/n)·|ê − e| + (λf/n)·Σ_i ‖f̂_i − f_i‖`.
pub fn task_loss(prediction: &Prediction, energy: f64, forces: &[Vec3], spec: &LossSpec) -> Result<f64> {
    let n = forces.len();
    if n == 0 {
        return Err(Error::Shape("task loss needs at least one atom".into()));
    }
    if prediction.forces.len() != n {
        return Err(Error::Shape(format!("{} predicted forces for {n} atoms", prediction.forces.len())));
    }
    let fe: f64 = prediction.forces.iter().zip(forces).map(|(a, b)| dist3(*a, *b)).sum();
    Ok((spec.lambda_e * (prediction.energy - energy).abs() + spec.lambda_f * fe) / n as f64)
}

/// `Σ_s weight_s · loss_s` over the systems of a labeled batch, on the tape.
pub fn batch_task_loss(tape: &mut Tape, out: &ForwardOutput, batch: &Batch, spec: &LossSpec, system_weights: &[f64]) -> Result<Var> {
    spec.validate()?;
    let (Some(energies), Some(forces)) = (&batch.energies, &batch.forces) else {
        return Err(Error::NoData("batch carries no labels".into()));
    };
    if system_weights.len() != batch.n_systems {
        return Err(Error::Shape("one loss weight per system required".into()));
    }
    let target_e = tape.constant(Tensor::from_vec(batch.n_systems, 1, energies.clone()));
    let target_f = tape.constant(Tensor::from_vec(batch.n_atoms, 3, forces.iter().flatten().copied().collect()));
    let de = tape.sub(out.energy, target_e);
    let de = tape.abs(de);
    let ew: Vec<f64> = system_weights.iter().zip(&batch.atoms_per_system).map(|(w, &n)| w * spec.lambda_e / n as f64).collect();
    let de = tape.scale_rows(de, Arc::new(ew));
    let le = tape.sum(de);
    let df = tape.sub(out.forces, target_f);
    let df = tape.row_norm(df);
    let fw: Vec<f64> = batch.atom_system.iter().map(|&s| system_weights[s] * spec.lambda_f / batch.atoms_per_system[s] as f64).collect();
    let df = tape.scale_rows(df, Arc::new(fw));
    let lf = tape.sum(df);
    Ok(tape.add(le, lf))
}

/// Mean task loss over `M` Haar-rotated copies of a labeled system.
pub fn symmetry_loss<R: Rng + ?Sized>(state: &ModelState, system: &AtomicSystem, samples: usize, spec: &LossSpec, rng: &mut R) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("symmetry loss needs M ≥ 1".into()));
    }
    let rotations: Vec<_> = (0..samples).map(|_| sample_rotation(rng)).collect();
    symmetry_loss_with(state, system, &rotations, spec)
}

/// Symmetry loss for explicit rotations.
pub fn symmetry_loss_with(state: &ModelState, system: &AtomicSystem, rotations: &[crate::so3::Rotation], spec: &LossSpec) -> Result<f64> {
    if rotations.is_empty() {
        return Err(Error::Config("symmetry loss needs M ≥ 1".into()));
    }
    let copies: Vec<AtomicSystem> = rotations.iter().map(|r| system.rotated(r)).collect();
    let batch = Batch::new(&copies, &state.config)?;
    let preds = predict(state, &batch)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(&copies) {
        let (Some(e), Some(f)) = (s.energy, &s.forces) else {
            return Err(Error::NoData("symmetry loss needs labels".into()));
        };
        total += task_loss(p, e, f, spec)?;
    }
    Ok(total / rotations.len() as f64)
}
