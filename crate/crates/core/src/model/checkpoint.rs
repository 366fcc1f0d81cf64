//! Self-describing JSON container for a model state.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredArray {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    seed: u64,
    n_params: usize,
    /// Bit width of the stored floats.
    precision: u32,
    params: Vec<StoredArray>,
    buffers: BTreeMap<String, f64>,
}

pub fn to_json(state: &ModelState) -> Result<String> {
    let ck = Checkpoint {
        config: state.config.clone(),
        seed: state.seed,
        n_params: state.param_count(),
        precision: 64,
        params: state
            .names
            .iter()
            .zip(&state.params)
            .map(|(n, t)| StoredArray { name: n.clone(), shape: [t.rows, t.cols], data: t.data.clone() })
            .collect(),
        buffers: state.buffers.clone(),
    };
    Ok(serde_json::to_string(&ck)?)
}

pub fn from_json(text: &str) -> Result<ModelState> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.precision != 64 {
        return Err(Error::Shape(format!("unsupported precision {}", ck.precision)));
    }
    let mut names = Vec::with_capacity(ck.params.len());
    let mut params = Vec::with_capacity(ck.params.len());
    for a in ck.params {
        if a.shape[0] * a.shape[1] != a.data.len() {
            return Err(Error::Shape(format!("{}: data does not match shape", a.name)));
        }
        params.push(Tensor::from_vec(a.shape[0], a.shape[1], a.data));
        names.push(a.name);
    }
    let state = ModelState::from_parts(ck.config, names, params, ck.buffers, ck.seed)?;
    if state.param_count() != ck.n_params {
        return Err(Error::Shape(format!("stored count {} differs from arrays {}", ck.n_params, state.param_count())));
    }
    Ok(state)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(state)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    from_json(&std::fs::read_to_string(path)?)
}
