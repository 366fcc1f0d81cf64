//! Grids of training runs: learning rate × batch size, or depth × width at a
//! fixed parameter count.

use crate::error::{Error, Result};
use crate::graph::AtomicSystem;
use crate::model::{param_count, Family, ModelConfig};
use crate::train::runlog::RunLog;
use crate::train::trainer::{train, TrainSpec};
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub label: String,
    pub config: ModelConfig,
    pub spec: TrainSpec,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub label: String,
    pub n_params: usize,
    pub log: RunLog,
}

impl SweepResult {
    /// Final validation loss, or `None` for a diverged or empty run.
    pub fn final_loss(&self) -> Option<f64> {
        if self.log.diverged() {
            None
        } else {
            self.log.final_loss()
        }
    }
}

/// All learning rate and batch size pairs for one config, rates varying fastest.
pub fn lr_batch_grid(config: &ModelConfig, base: &TrainSpec, lrs: &[f64], batch_sizes: &[usize]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &bs in batch_sizes {
        for &lr in lrs {
            let mut spec = base.clone();
            spec.optimizer.lr = lr;
            spec.optimizer.batch_size = bs;
            cells.push(SweepCell { label: format!("lr={lr:e} bs={bs}"), config: config.clone(), spec });
        }
    }
    cells
}

/// Smallest width whose parameter count at `depth` reaches `target`.
pub fn width_for_params(family: Family, depth: usize, target: usize) -> Result<usize> {
    let count = |w: usize| param_count(&ModelConfig::for_family(family, depth, w));
    let (mut lo, mut hi) = (1usize, 2usize);
    while count(hi)? < target {
        hi *= 2;
        if hi > 1 << 20 {
            return Err(Error::Config(format!("no width reaches {target} parameters")));
        }
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if count(mid)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// One cell per depth, each widened to about `target` parameters.
pub fn depth_width_grid(family: Family, target: usize, depths: &[usize], base: &TrainSpec) -> Result<Vec<SweepCell>> {
    depths
        .iter()
        .map(|&d| {
            let w = width_for_params(family, d, target)?;
            Ok(SweepCell { label: format!("d={d} w={w}"), config: ModelConfig::for_family(family, d, w), spec: base.clone() })
        })
        .collect()
}

/// Trains every cell; a diverged cell is kept with its failure record.
pub fn sweep(cells: &[SweepCell], train_set: &[AtomicSystem], validation: &[AtomicSystem]) -> Result<Vec<SweepResult>> {
    if cells.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    cells
        .iter()
        .map(|c| {
            let out = train(&c.config, train_set, validation, &c.spec)?;
            Ok(SweepResult { label: c.label.clone(), n_params: param_count(&c.config)?, log: out.log })
        })
        .collect()
}

/// Plain-text table of final losses, best first.
pub fn format_sweep_table(results: &[SweepResult]) -> String {
    let mut rows: Vec<&SweepResult> = results.iter().collect();
    rows.sort_by(|a, b| match (a.final_loss(), b.final_loss()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let mut out = format!("{:<28} {:>10} {:>12}\n", "cell", "N", "final loss");
    for r in rows {
        let loss = r.final_loss().map_or_else(|| "diverged".to_string(), |l| format!("{l:.6}"));
        let _ = writeln!(out, "{:<28} {:>10} {:>12}", r.label, r.n_params, loss);
    }
    out
}
