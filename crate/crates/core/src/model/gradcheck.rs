//! Central finite-difference check of model gradients.

use crate::error::Result;
use crate::model::{gradients, predict, Batch, ModelState};
use crate::train::loss::{task_loss, LossSpec};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradientCheck {
    /// `(parameter name, flat index within it, analytic, finite difference)`.
    pub entries: Vec<(String, usize, f64, f64)>,
    pub max_relative_error: f64,
}

/// Mean per-system task loss of a labeled batch, without a tape.
pub fn batch_loss(state: &ModelState, batch: &Batch, spec: &LossSpec) -> Result<f64> {
    let preds = predict(state, batch)?;
    let energies = batch.energies.as_ref().ok_or_else(|| crate::Error::NoData("unlabeled batch".into()))?;
    let forces = batch.forces.as_ref().expect("labels come in pairs");
    let mut off = 0;
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        let n = batch.atoms_per_system[i];
        total += task_loss(p, energies[i], &forces[off..off + n], spec)?;
        off += n;
    }
    Ok(total / preds.len() as f64)
}

/// Compares analytic gradients with central differences at `count` random entries.
///
/// The relative error of an entry is `|g − g_fd| / max(|g|, |g_fd|, floor)`.
pub fn check_gradients(state: &ModelState, batch: &Batch, spec: &LossSpec, count: usize, step: f64, floor: f64, seed: u64) -> Result<GradientCheck> {
    let analytic = gradients(state, batch, spec)?;
    let total = state.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, total, count.min(total)).into_vec();
    picks.sort_unstable();
    let mut flat_grad = Vec::with_capacity(total);
    for g in &analytic.grads {
        flat_grad.extend_from_slice(&g.data);
    }
    let mut owners = Vec::with_capacity(total);
    for (name, t) in state.names.iter().zip(&state.params) {
        owners.extend((0..t.len()).map(|i| (name.clone(), i)));
    }
    let base = state.flat();
    let mut probe = state.clone();
    let mut entries = Vec::with_capacity(picks.len());
    let mut worst: f64 = 0.0;
    for k in picks {
        let mut x = base.clone();
        x[k] = base[k] + step;
        probe.set_flat(&x)?;
        let up = batch_loss(&probe, batch, spec)?;
        x[k] = base[k] - step;
        probe.set_flat(&x)?;
        let down = batch_loss(&probe, batch, spec)?;
        let fd = (up - down) / (2.0 * step);
        let g = flat_grad[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
        let (name, idx) = owners[k].clone();
        entries.push((name, idx, g, fd));
    }
    Ok(GradientCheck { entries, max_relative_error: worst })
}
