//! Single-pass training with periodic held-out evaluation.

use crate::error::{Error, Result};
use crate::graph::{fit_energy_reference, normalize_labels, AtomicSystem, NormalizationStats};
use crate::model::{
    calibrate_scales, config::mup_lr_transfer, forward_flops, gradients, init_state, param_specs, predict, weighted_gradients, Batch, ModelConfig,
    ModelState,
};
use crate::so3::rotation::sample_rotation;
use crate::train::loss::{task_loss, LossSpec};
use crate::train::optim::{OptimizerSpec, ScheduleFreeAdamW};
use crate::train::runlog::{config_hash, CurvePoint, Failure, RunLog, RunMeta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Throughput of the deterministic reference clock, in FLOP/s.
///
/// Logged wall time is `C / REFERENCE_FLOPS_PER_SECOND` so reruns are identical.
pub const REFERENCE_FLOPS_PER_SECOND: f64 = 1e9;

/// A backward pass costs twice the forward one.
pub const TRAIN_TO_FORWARD: u64 = 3;

/// Batches used to estimate the directional family's frozen scales.
pub const CALIBRATION_BATCHES: usize = 4;

/// Cost multiplier of training with `M` rotated copies per system.
pub fn symmetry_flops_multiplier(m: usize) -> u64 {
    m as u64 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    /// Spacing of validation checkpoints as a fraction of the token budget.
    pub eval_fraction: f64,
    /// Cap on validation systems, taken from the front of the split.
    pub max_val_systems: Option<usize>,
    /// Stop when the batch loss exceeds this multiple of the first one.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl TrainSpec {
    pub fn new(optimizer: OptimizerSpec, seed: u64) -> Self {
        Self { loss: LossSpec::default(), optimizer, eval_fraction: 0.02, max_val_systems: None, divergence_factor: 1e6, seed }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) || !(self.divergence_factor > 1.0) {
            return Err(Error::Config("eval_fraction must lie in (0, 1] and divergence_factor exceed 1".into()));
        }
        Ok(())
    }
}

/// Final averaged parameters, their label normalization, and the learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub state: ModelState,
    pub stats: Option<NormalizationStats>,
}

/// Per-entry learning rates: width transfer for maps whose fan-in is the
/// scalar width, the base rate elsewhere.
pub fn learning_rates(config: &ModelConfig, opt: &OptimizerSpec) -> Result<Vec<f64>> {
    let w = config.scalar_width();
    let hidden = mup_lr_transfer(opt.lr, opt.base_width, w)?;
    Ok(param_specs(config)?
        .iter()
        .flat_map(|s| std::iter::repeat_n(if s.rows == w && s.name != "embed" { hidden } else { opt.lr }, s.len()))
        .collect())
}

pub fn run_meta(config: &ModelConfig, spec: &TrainSpec) -> Result<RunMeta> {
    Ok(RunMeta {
        arch: config.family.name().to_string(),
        n_params: crate::model::param_count(config)? as u64,
        width: config.width,
        depth: config.depth,
        sym_loss_active: spec.loss.symmetry.is_some(),
        m: spec.loss.symmetry_samples(),
        lr: spec.optimizer.lr,
        batch_size: spec.optimizer.batch_size,
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&(config, spec))?,
    })
}

/// Mean per-system task loss of `state` on labeled systems.
pub fn evaluate(state: &ModelState, systems: &[AtomicSystem], spec: &LossSpec) -> Result<f64> {
    if systems.is_empty() {
        return Err(Error::NoData("empty validation split".into()));
    }
    let mut total = 0.0;
    for chunk in systems.chunks(64) {
        let batch = Batch::new(chunk, &state.config)?;
        for (p, s) in predict(state, &batch)?.iter().zip(chunk) {
            let (Some(e), Some(f)) = (s.energy, s.forces.as_ref()) else {
                return Err(Error::NoData("validation system without labels".into()));
            };
            total += task_loss(p, e, f, spec)?;
        }
    }
    Ok(total / systems.len() as f64)
}

/// Trains once over `train` in order, validating every `eval_fraction` of its tokens.
///
/// Labels of both splits are normalized with a composition reference fitted
/// on `train`. Divergence ends the run with a failure record rather than an error.
pub fn train(config: &ModelConfig, train: &[AtomicSystem], validation: &[AtomicSystem], spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    let mut state = init_state(config, spec.seed)?;
    let mut log = RunLog::new(run_meta(config, spec)?);
    if train.is_empty() {
        return Ok(TrainOutcome { log, state, stats: None });
    }
    let stats = fit_energy_reference(train)?;
    let norm = |s: &[AtomicSystem]| s.iter().map(|x| normalize_labels(x, &stats)).collect::<Result<Vec<_>>>();
    let train = norm(train)?;
    let val_cap = spec.max_val_systems.unwrap_or(validation.len()).min(validation.len());
    let validation = norm(&validation[..val_cap])?;

    let bs = spec.optimizer.batch_size;
    if state.config.family == crate::model::Family::Directional {
        let calib: Vec<Batch> = train.chunks(bs).take(CALIBRATION_BATCHES).map(|c| Batch::new(c, config)).collect::<Result<_>>()?;
        calibrate_scales(&mut state, &calib)?;
    }

    let mut opt = ScheduleFreeAdamW::new(spec.optimizer, state.flat(), learning_rates(config, &spec.optimizer)?)?;
    let total_tokens = crate::graph::token_count(&train);
    let m = spec.loss.symmetry_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (mut tokens, mut flops, mut step) = (0u64, 0u64, 0u64);
    let mut next_eval = 1u64;
    let mut first_loss = None;

    for chunk in train.chunks(bs) {
        state.set_flat(&opt.gradient_point())?;
        let result = if m == 0 {
            let batch = Batch::new(chunk, config)?;
            gradients(&state, &batch, &spec.loss).map(|g| (g.forward_flops, g))
        } else {
            symmetry_gradients(&state, chunk, &spec.loss, &mut rng)
        };
        step += 1;
        let (fwd, g) = match result {
            Ok(r) => r,
            Err(Error::NonFiniteGradient { .. }) => {
                log.failure = Some(Failure { failure: "diverged".into(), step, loss: None });
                break;
            }
            Err(e) => return Err(e),
        };
        let first = *first_loss.get_or_insert(g.loss);
        if !g.loss.is_finite() || g.loss > spec.divergence_factor * first {
            log.failure = Some(Failure { failure: "diverged".into(), step, loss: g.loss.is_finite().then_some(g.loss) });
            break;
        }
        let flat: Vec<f64> = g.grads.iter().flat_map(|t| t.data.iter().copied()).collect();
        opt.step(&flat)?;
        tokens += crate::graph::token_count(chunk);
        flops += TRAIN_TO_FORWARD * fwd * symmetry_flops_multiplier(m);

        let due = (tokens as f64) >= next_eval as f64 * spec.eval_fraction * total_tokens as f64 - 1e-9 || tokens == total_tokens;
        if due && !validation.is_empty() {
            while (next_eval as f64) * spec.eval_fraction * (total_tokens as f64) <= tokens as f64 + 1e-9 {
                next_eval += 1;
            }
            state.set_flat(opt.averaged())?;
            let val_loss = evaluate(&state, &validation, &spec.loss)?;
            if !val_loss.is_finite() {
                log.failure = Some(Failure { failure: "diverged".into(), step, loss: None });
                break;
            }
            log.points.push(CurvePoint { step, tokens, flops, wall_seconds: flops as f64 / REFERENCE_FLOPS_PER_SECOND, val_loss });
        }
    }
    state.set_flat(opt.averaged())?;
    Ok(TrainOutcome { log, state, stats: Some(stats) })
}

/// Gradient of the task loss plus `λ/M` times the loss on `M` rotated copies
/// of each system, all on one tape. The returned FLOPs are those of the
/// unrotated systems alone, so callers apply the `(M+1)` multiplier.
fn symmetry_gradients(
    state: &ModelState,
    chunk: &[AtomicSystem],
    spec: &LossSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(u64, crate::model::LossGradients)> {
    let sym = spec.symmetry.expect("symmetry spec");
    let n = chunk.len() as f64;
    let mut systems: Vec<AtomicSystem> = chunk.to_vec();
    let mut weights = vec![1.0 / n; chunk.len()];
    for s in chunk {
        for _ in 0..sym.samples {
            systems.push(s.rotated(&sample_rotation(rng)));
            weights.push(sym.weight / (sym.samples as f64 * n));
        }
    }
    let base = Batch::new(chunk, &state.config)?;
    let fwd = forward_flops(state, &base)?;
    let union = Batch::new(&systems, &state.config)?;
    Ok((fwd, weighted_gradients(state, &union, spec, &weights)?))
}
