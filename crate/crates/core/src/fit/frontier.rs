//! Pareto frontiers of loss against budget, curve smoothing, and the
//! `(N, D, L)` triples read off single-epoch learning curves.

use crate::train::RunLog;
use serde::{Deserialize, Serialize};

/// Which budget a frontier or power law is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Training FLOPs.
    Flops,
    /// Wall-clock hours.
    Hours,
}

impl Axis {
    pub fn symbol(self) -> &'static str {
        match self {
            Axis::Flops => "C",
            Axis::Hours => "H",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub budget: f64,
    /// Lowest loss reached at or below `budget`.
    pub loss: f64,
}

/// `s_t = θ·s_{t−1} + (1−θ)·x_t` with `s_0 = x_0`.
pub fn ema_smooth(series: &[f64], theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for &x in series {
        let s = match out.last() {
            None => x,
            Some(&prev) => theta * prev + (1.0 - theta) * x,
        };
        out.push(s);
    }
    out
}

/// Running minimum over increasing budget; only strict improvements survive,
/// so a tie keeps the smaller budget.
pub fn frontier_of_points(points: &[(f64, f64)]) -> Vec<FrontierPoint> {
    let mut sorted: Vec<(f64, f64)> = points.iter().copied().filter(|(b, l)| b.is_finite() && l.is_finite()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<FrontierPoint> = Vec::new();
    for (budget, loss) in sorted {
        if out.last().is_none_or(|p| loss < p.loss) {
            out.push(FrontierPoint { budget, loss });
        }
    }
    out
}

/// Frontier over every checkpoint of every run, failed runs included up to their failure.
pub fn pareto_frontier(runs: &[RunLog], axis: Axis) -> Vec<FrontierPoint> {
    let points: Vec<(f64, f64)> = runs
        .iter()
        .flat_map(|r| r.points.iter())
        .map(|p| {
            let budget = match axis {
                Axis::Flops => p.flops as f64,
                Axis::Hours => p.wall_hours(),
            };
            (budget, p.val_loss)
        })
        .collect();
    frontier_of_points(&points)
}

/// One `(N, D, L)` triple per run and data fraction: the smoothed loss at the
/// first checkpoint with at least `r·D_max` tokens. Diverged runs are skipped.
pub fn sum_law_triples(runs: &[RunLog], fractions: &[f64], theta: f64) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for run in runs.iter().filter(|r| !r.diverged() && !r.points.is_empty()) {
        let n = run.meta().n_params as f64;
        let smooth = ema_smooth(&run.points.iter().map(|p| p.val_loss).collect::<Vec<_>>(), theta);
        let d_max = run.points.last().expect("non-empty").tokens as f64;
        let mut last_index = None;
        for &r in fractions {
            let i = run.points.iter().position(|p| p.tokens as f64 >= r * d_max - 1e-9);
            if let Some(i) = i {
                if last_index != Some(i) {
                    out.push((n, run.points[i].tokens as f64, smooth[i]));
                    last_index = Some(i);
                }
            }
        }
    }
    out
}
