//! Message-passing potentials with direct energy and force heads.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod params;
pub mod so3conv;

mod cartesian;
mod directional;
mod spherical;
mod unconstrained;

pub use batch::Batch;
pub use cartesian::message_cartesian;
pub use config::{build_ladder, build_ladder_at_depth, mup_lr_transfer, CutoffPreset, Family, ModelConfig};
pub use gradcheck::{check_gradients, GradientCheck};
pub use params::{Bound, Init, ModelState, ParamSpec};
pub use so3conv::{so2_convolution_reduced, so3_convolution_full, PathWeights, So2Kernels};
pub use unconstrained::message_unconstrained;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{AtomicSystem, NeighborGraph};
use crate::so3::rotation::Vec3;
use crate::train::loss::{batch_task_loss, LossSpec};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Energy and forces for one system, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub energy: f64,
    pub forces: Vec<Vec3>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardOutput {
    /// Per-system energies, `[n_systems, 1]`.
    pub energy: Var,
    /// Per-atom forces, `[n_atoms, 3]`.
    pub forces: Var,
    /// Named intermediate activations for inspection.
    pub probes: Vec<(String, Var)>,
}

/// Parameter shapes of a config, in a fixed order.
pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let ws = config.scalar_width();
    let mut specs = vec![ParamSpec::new("embed", config.elements.len(), ws, Init::Unit)];
    match config.family {
        Family::Unconstrained => unconstrained::specs(config, &mut specs),
        Family::Directional => directional::specs(config, &mut specs),
        Family::CartesianVector => cartesian::specs(config, &mut specs),
        Family::SphericalTensor => spherical::specs(config, &mut specs),
    }
    specs.push(ParamSpec::new("readout.w1", ws, ws, Init::FanIn));
    specs.push(ParamSpec::new("readout.b1", 1, ws, Init::Zeros));
    specs.push(ParamSpec::new("readout.w2", ws, 1, Init::FanIn));
    Ok(specs)
}

/// Exact learnable parameter count of a config.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(param_specs(config)?.iter().map(ParamSpec::len).sum())
}

/// Fresh parameters drawn from `seed`; frozen scales start at 1.
pub fn init_state(config: &ModelConfig, seed: u64) -> Result<ModelState> {
    let specs = param_specs(config)?;
    let params = params::init_params(&specs, seed);
    let names = specs.into_iter().map(|s| s.name).collect();
    ModelState::from_parts(config.clone(), names, params, BTreeMap::new(), seed)
}

fn env_mean(batch: &Batch) -> Arc<Vec<f64>> {
    Arc::new(batch.envelope.iter().zip(batch.mean_weights.iter()).map(|(a, b)| a * b).collect())
}

/// Records the forward pass of `state` on `tape`.
pub fn forward_on_tape(state: &ModelState, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<ForwardOutput> {
    let cfg = &state.config;
    if batch.radial.cols != cfg.n_radial {
        return Err(Error::Shape("batch was built for a different config".into()));
    }
    let emb = tape.gather_rows(p.get("embed"), batch.element_rows.clone());
    let weights = env_mean(batch);
    let mut probes = Vec::new();
    let (scalars, forces) = match cfg.family {
        Family::Unconstrained => unconstrained::forward(state, tape, p, batch, emb, &weights, &mut probes)?,
        Family::Directional => directional::forward(state, tape, p, batch, emb, &weights, &mut probes)?,
        Family::CartesianVector => cartesian::forward(state, tape, p, batch, emb, &weights, &mut probes)?,
        Family::SphericalTensor => spherical::forward(state, tape, p, batch, emb, &weights, &mut probes)?,
    };
    let hid = tape.matmul(scalars, p.get("readout.w1"));
    let hid = tape.add_row(hid, p.get("readout.b1"));
    let hid = tape.silu(hid);
    let atom_energy = tape.matmul(hid, p.get("readout.w2"));
    let energy = tape.scatter_rows(atom_energy, batch.atom_system.clone(), batch.n_systems, None);
    tape.add_flops(batch.geometry_flops);
    Ok(ForwardOutput { energy, forces, probes })
}

/// Per-system predictions for a batch.
pub fn predict(state: &ModelState, batch: &Batch) -> Result<Vec<Prediction>> {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape, false);
    let out = forward_on_tape(state, &mut tape, &p, batch)?;
    Ok(split_predictions(tape.value(out.energy), tape.value(out.forces), batch))
}

fn split_predictions(energy: &Tensor, forces: &Tensor, batch: &Batch) -> Vec<Prediction> {
    let mut off = 0;
    batch
        .atoms_per_system
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            let f = (off..off + n).map(|i| [forces.get(i, 0), forces.get(i, 1), forces.get(i, 2)]).collect();
            off += n;
            Prediction { energy: energy.data[s], forces: f }
        })
        .collect()
}

/// Prediction for one system on a prebuilt graph.
pub fn forward(state: &ModelState, system: &AtomicSystem, graph: &NeighborGraph) -> Result<Prediction> {
    let batch = Batch::from_graphs(std::slice::from_ref(system), std::slice::from_ref(graph), &state.config)?;
    Ok(predict(state, &batch)?.remove(0))
}

/// Loss, per-parameter gradients, and FLOPs of the forward pass.
pub struct LossGradients {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub forward_flops: u64,
}

/// Mean per-system task loss of a labeled batch and its gradient.
pub fn gradients(state: &ModelState, batch: &Batch, spec: &LossSpec) -> Result<LossGradients> {
    let weights = vec![1.0 / batch.n_systems as f64; batch.n_systems];
    weighted_gradients(state, batch, spec, &weights)
}

/// Like [`gradients`] with an explicit weight per system in the loss sum.
pub fn weighted_gradients(state: &ModelState, batch: &Batch, spec: &LossSpec, system_weights: &[f64]) -> Result<LossGradients> {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape, true);
    let out = forward_on_tape(state, &mut tape, &p, batch)?;
    let forward_flops = tape.flops();
    let loss = batch_task_loss(&mut tape, &out, batch, spec, system_weights)?;
    let value = tape.value(loss).data[0];
    let g = tape.backward(loss);
    let mut grads = Vec::with_capacity(p.vars.len());
    for ((v, name), t) in p.vars.iter().zip(&state.names).zip(&state.params) {
        let data = g.get_or_zeros(*v, t.len());
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: name.clone() });
        }
        grads.push(Tensor::from_vec(t.rows, t.cols, data));
    }
    Ok(LossGradients { loss: value, grads, forward_flops })
}

/// Forward FLOPs of one pass over `batch`.
pub fn forward_flops(state: &ModelState, batch: &Batch) -> Result<u64> {
    let mut tape = Tape::new();
    let p = state.bind(&mut tape, false);
    forward_on_tape(state, &mut tape, &p, batch)?;
    Ok(tape.flops())
}

/// Sets the directional family's frozen triplet and quadruplet scales to the
/// inverse standard deviation of their raw sums, layer by layer.
pub fn calibrate_scales(state: &mut ModelState, batches: &[Batch]) -> Result<()> {
    if state.config.family != Family::Directional || batches.is_empty() {
        return Ok(());
    }
    for t in 0..state.config.depth {
        for kind in ["triplet", "quadruplet"] {
            let probe = format!("layer{t}.{kind}_sum");
            let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
            for b in batches {
                let mut tape = Tape::new();
                let p = state.bind(&mut tape, false);
                let out = forward_on_tape(state, &mut tape, &p, b)?;
                let var = out.probes.iter().find(|(k, _)| *k == probe).map(|(_, v)| *v).expect("probe recorded");
                for x in &tape.value(var).data {
                    sum += x;
                    sq += x * x;
                    n += 1;
                }
            }
            if n > 1 {
                let mean = sum / n as f64;
                let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
                if std > 0.0 {
                    state.buffers.insert(format!("layer{t}.scale_{kind}"), 1.0 / std);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
