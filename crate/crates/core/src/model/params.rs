//! Named parameter arrays and their initialization.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, HashMap};

/// How a parameter array is drawn at init.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Gaussian with variance `1/rows` (fan-in scaling).
    FanIn,
    /// Standard Gaussian.
    Unit,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        Self { name: name.into(), rows, cols, init }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learnable arrays plus frozen non-learnable buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    /// Frozen per-layer constants (not counted in N).
    pub buffers: BTreeMap<String, f64>,
    pub seed: u64,
    index: HashMap<String, usize>,
}

impl ModelState {
    pub fn from_parts(config: ModelConfig, names: Vec<String>, params: Vec<Tensor>, buffers: BTreeMap<String, f64>, seed: u64) -> Result<Self> {
        let specs = crate::model::param_specs(&config)?;
        if specs.len() != names.len() || names.len() != params.len() {
            return Err(Error::Shape(format!("config expects {} arrays, got {}", specs.len(), params.len())));
        }
        for ((s, n), p) in specs.iter().zip(&names).zip(&params) {
            if &s.name != n || s.rows != p.rows || s.cols != p.cols {
                return Err(Error::Shape(format!("{n}: expected {} [{}×{}], got [{}×{}]", s.name, s.rows, s.cols, p.rows, p.cols)));
            }
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("{n} holds non-finite entries")));
            }
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { config, names, params, buffers, seed, index })
    }

    /// Total learnable entries.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn buffer(&self, name: &str) -> f64 {
        self.buffers.get(name).copied().unwrap_or(1.0)
    }

    /// Places every array on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let vars = self.params.iter().map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) }).collect();
        Bound { vars, state: self }
    }

    /// Flattened copy of all parameters in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("expected {} values, got {}", self.param_count(), flat.len())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Parameters of one state placed on a tape.
pub struct Bound<'a> {
    pub vars: Vec<Var>,
    pub state: &'a ModelState,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        let i = *self.state.index.get(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        self.vars[i]
    }
}

/// Draws every array of `specs` from a seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|s| {
            let data = match s.init {
                Init::Zeros => vec![0.0; s.len()],
                Init::Unit | Init::FanIn => {
                    let std = if s.init == Init::Unit { 1.0 } else { 1.0 / (s.rows as f64).sqrt() };
                    let normal = Normal::new(0.0, std).expect("finite std");
                    (0..s.len()).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            Tensor::from_vec(s.rows, s.cols, data)
        })
        .collect()
}
