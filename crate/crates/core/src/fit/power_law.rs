//! `L(C) = L_∞ + F·C^{−γ}` fitted to a frontier.

use super::bootstrap::BootstrapSummary;
use super::frontier::{Axis, FrontierPoint};
use super::lsq::minimize;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const MIN_FRONTIER_POINTS: usize = 5;
/// Budget span a fit must cover, in decades.
pub const MIN_DECADES: f64 = 2.0;

const GAMMA_STARTS: [f64; 5] = [0.05, 0.1, 0.3, 0.5, 1.0];
const FLOOR_STARTS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub l_inf: f64,
    pub f: f64,
    pub gamma: f64,
    pub variable: Axis,
    /// Whether `l_inf` was held fixed rather than fitted.
    pub l_inf_fixed: bool,
    /// Sum of squared log-loss residuals.
    pub residual: f64,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapSummary>,
}

impl PowerLawFit {
    pub const PARAM_NAMES: [&'static str; 3] = ["L_inf", "F", "gamma"];

    pub fn params(&self) -> Vec<f64> {
        vec![self.l_inf, self.f, self.gamma]
    }

    pub fn predict(&self, budget: f64) -> f64 {
        self.l_inf + self.f * budget.powf(-self.gamma)
    }

    /// Prefactor with the budget measured in units of `scale` (e.g. 1e15 for PFLOPs).
    pub fn prefactor_in_units(&self, scale: f64) -> f64 {
        self.f * scale.powf(-self.gamma)
    }
}

fn check_span(frontier: &[FrontierPoint]) -> Result<()> {
    if frontier.len() < MIN_FRONTIER_POINTS {
        return Err(Error::NonIdentifiable(format!("need at least {MIN_FRONTIER_POINTS} frontier points, got {}", frontier.len())));
    }
    if frontier.iter().any(|p| !(p.budget > 0.0) || !(p.loss > 0.0)) {
        return Err(Error::NonIdentifiable("budgets and losses must be positive".into()));
    }
    let (lo, hi) = frontier.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.budget), hi.max(p.budget)));
    if (hi / lo).log10() < MIN_DECADES {
        return Err(Error::NonIdentifiable(format!("budgets span {:.2} decades, need {MIN_DECADES}", (hi / lo).log10())));
    }
    Ok(())
}

/// Ordinary least squares of `y` on `x`: `(intercept, slope, sse)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (icpt, slope, sse)
}

/// Fits a frontier. With `fix_l_inf = Some(v)` this is a line through
/// `log(L − v)` against `log C`; with `None` all three parameters are fitted
/// from several starts and the lowest residual wins.
pub fn fit_power_law(frontier: &[FrontierPoint], fix_l_inf: Option<f64>, variable: Axis) -> Result<PowerLawFit> {
    check_span(frontier)?;
    let x: Vec<f64> = frontier.iter().map(|p| p.budget.ln()).collect();
    let done = |l_inf: f64, ln_f: f64, gamma: f64, residual: f64, fixed: bool| -> Result<PowerLawFit> {
        if !(gamma > 0.0) || !ln_f.is_finite() || !(l_inf >= 0.0) {
            return Err(Error::FitFailed(format!("fit left the valid region: L_inf={l_inf}, ln F={ln_f}, gamma={gamma}")));
        }
        Ok(PowerLawFit { l_inf, f: ln_f.exp(), gamma, variable, l_inf_fixed: fixed, residual, n_points: frontier.len(), ci: None })
    };

    if let Some(v) = fix_l_inf {
        if frontier.iter().any(|p| p.loss <= v) {
            return Err(Error::NonIdentifiable(format!("fixed L_inf = {v} is not below every loss")));
        }
        let y: Vec<f64> = frontier.iter().map(|p| (p.loss - v).ln()).collect();
        let (icpt, slope, _) = line_fit(&x, &y);
        let residual = frontier.iter().zip(&x).map(|(p, lx)| ((v + (icpt + slope * lx).exp()).ln() - p.loss.ln()).powi(2)).sum();
        return done(v, icpt, -slope, residual, true);
    }

    // Parameters: ln F, γ, s with L_inf = s².
    let model = |p: &[f64]| {
        let mut r = Vec::with_capacity(frontier.len());
        let mut j = DMatrix::zeros(frontier.len(), 3);
        for (i, (pt, lx)) in frontier.iter().zip(&x).enumerate() {
            let term = (p[0] - p[1] * lx).exp();
            let pred = p[2] * p[2] + term;
            if !(pred > 0.0) || !pred.is_finite() {
                return None;
            }
            r.push(pred.ln() - pt.loss.ln());
            j[(i, 0)] = term / pred;
            j[(i, 1)] = -lx * term / pred;
            j[(i, 2)] = 2.0 * p[2] / pred;
        }
        Some((r, j))
    };
    let min_loss = frontier.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut reasons = Vec::new();
    for &frac in &FLOOR_STARTS {
        let floor = frac * min_loss;
        for &g in &GAMMA_STARTS {
            let ln_f = frontier.iter().zip(&x).map(|(p, lx)| (p.loss - floor).ln() + g * lx).sum::<f64>() / x.len() as f64;
            let sol = minimize(&[ln_f, g, floor.sqrt()], &model);
            if sol.converged && sol.params[1] > 0.0 && best.as_ref().is_none_or(|b| sol.cost < b.1) {
                best = Some((sol.params, sol.cost));
            } else if !sol.converged {
                reasons.push(sol.reason);
            }
        }
    }
    match best {
        Some((p, cost)) => done(p[2] * p[2], p[0], p[1], cost, false),
        None => Err(Error::FitFailed(format!(
            "no start converged to a decaying power law; last reasons: {:?}",
            reasons.iter().rev().take(3).collect::<Vec<_>>()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(l_inf: f64, f: f64, gamma: f64, noise: f64, seed: u64) -> Vec<FrontierPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..30)
            .map(|i| {
                let budget = 10f64.powf(12.0 + 6.0 * i as f64 / 29.0);
                let e = if noise > 0.0 { eps.sample(&mut rng) } else { 0.0 };
                FrontierPoint { budget, loss: (l_inf + f * budget.powf(-gamma)) * (1.0 + e) }
            })
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let fit = fit_power_law(&synthetic(0.0, 0.9, 0.14, 0.0, 0), Some(0.0), Axis::Flops).unwrap();
        assert!((fit.f - 0.9).abs() < 1e-6 && (fit.gamma - 0.14).abs() < 1e-6);
        assert!(fit.residual < 1e-20);
    }

    #[test]
    fn noisy_gamma_within_tolerance() {
        for seed in 0..10 {
            let fit = fit_power_law(&synthetic(0.0, 0.9, 0.142, 0.01, seed), Some(0.0), Axis::Flops).unwrap();
            assert!((fit.gamma - 0.142).abs() < 0.005, "{}", fit.gamma);
        }
    }

    #[test]
    fn free_floor_recovered() {
        let fit = fit_power_law(&synthetic(0.05, 200.0, 0.3, 0.0, 0), None, Axis::Flops).unwrap();
        assert!((fit.l_inf - 0.05).abs() < 1e-6 && (fit.gamma - 0.3).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn narrow_or_short_frontiers_rejected() {
        let f = synthetic(0.0, 0.9, 0.14, 0.0, 0);
        assert!(matches!(fit_power_law(&f[..4], Some(0.0), Axis::Flops), Err(Error::NonIdentifiable(_))));
        assert!(matches!(fit_power_law(&f[..8], Some(0.0), Axis::Flops), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn prefactor_changes_units() {
        let fit = fit_power_law(&synthetic(0.0, 0.9, 0.14, 0.0, 0), Some(0.0), Axis::Flops).unwrap();
        let c = 3e16;
        assert!((fit.prefactor_in_units(1e15) * (c / 1e15f64).powf(-fit.gamma) - fit.predict(c)).abs() < 1e-12);
    }
}
