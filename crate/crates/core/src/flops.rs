//! FLOP accounting from the instrumented forward pass, and the per-token
//! constant κ in `C ≈ 3κND`.

use crate::error::{Error, Result};
use crate::graph::{token_count, AtomicSystem};
use crate::model::{forward_flops, init_state, param_count, Batch, ModelConfig};
use crate::train::trainer::TRAIN_TO_FORWARD;
use serde::{Deserialize, Serialize};

/// Systems per instrumented forward pass.
const COUNT_CHUNK: usize = 16;

/// Forward FLOPs of one pass over `systems`. Counts depend on the graphs, not
/// on parameter values, so a fixed-seed state is used.
pub fn count_forward_flops(config: &ModelConfig, systems: &[AtomicSystem]) -> Result<u64> {
    let state = init_state(config, 0)?;
    let mut total = 0;
    for chunk in systems.chunks(COUNT_CHUNK) {
        total += forward_flops(&state, &Batch::new(chunk, config)?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub forward_per_token: f64,
    /// Training FLOPs of one pass, forward plus backward.
    pub train_flops: u64,
    pub tokens: u64,
    pub n_params: u64,
}

pub fn flops_report(config: &ModelConfig, systems: &[AtomicSystem]) -> Result<FlopsReport> {
    let tokens = token_count(systems);
    if tokens == 0 {
        return Err(Error::NoData("no atoms to count FLOPs over".into()));
    }
    let fwd = count_forward_flops(config, systems)?;
    Ok(FlopsReport {
        forward_per_token: fwd as f64 / tokens as f64,
        train_flops: TRAIN_TO_FORWARD * fwd,
        tokens,
        n_params: param_count(config)? as u64,
    })
}

/// Through-origin fit of `C` on `3ND`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaFit {
    pub kappa: f64,
    pub r_squared: f64,
    /// `(N·D, C)` pairs the fit used.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares slope of `C` on `3·N·D` through the origin.
///
/// `R²` is the centered coefficient `1 − SS_res/SS_tot`.
pub fn estimate_kappa(runs: &[(u64, u64, u64)]) -> Result<KappaFit> {
    if runs.len() < 3 {
        return Err(Error::NonIdentifiable(format!("need at least 3 (N, D, C) points, got {}", runs.len())));
    }
    let points: Vec<(f64, f64)> = runs.iter().map(|&(n, d, c)| (n as f64 * d as f64, c as f64)).collect();
    let (lo, hi) = points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if !(lo > 0.0) || hi < 10.0 * lo {
        return Err(Error::NonIdentifiable("N·D must be positive and span at least a factor of 10".into()));
    }
    let sxy: f64 = points.iter().map(|(x, c)| 3.0 * x * c).sum();
    let sxx: f64 = points.iter().map(|(x, _)| 9.0 * x * x).sum();
    let kappa = sxy / sxx;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|(_, c)| (c - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|(x, c)| (c - 3.0 * kappa * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(KappaFit { kappa, r_squared, points })
}

/// `(N, D, C)` for every config and every data prefix, one training pass each.
pub fn ladder_points(configs: &[ModelConfig], systems: &[AtomicSystem], fractions: &[f64]) -> Result<Vec<(u64, u64, u64)>> {
    let mut out = Vec::new();
    for cfg in configs {
        let n = param_count(cfg)? as u64;
        for &r in fractions {
            let part = crate::data::prefix_fraction(systems, r);
            let report = flops_report(cfg, part)?;
            out.push((n, report.tokens, report.train_flops));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ToyPotentialSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn systems(n: usize) -> Vec<AtomicSystem> {
        generate(&ToyPotentialSpec { min_atoms: 4, max_atoms: 10, ..ToyPotentialSpec::default() }, n, 3).0
    }

    #[test]
    fn exact_synthetic_kappa() {
        let runs: Vec<_> = [(10, 100), (100, 100), (1000, 50), (50, 2000)].iter().map(|&(n, d)| (n, d, 6 * n * d)).collect();
        let fit = estimate_kappa(&runs).unwrap();
        assert!((fit.kappa - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_kappa_matches_closed_form_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let runs: Vec<(u64, u64, u64)> = (0..30)
            .map(|i| {
                let n = 1000 * (1 + i as u64 % 7);
                let d = 10_000 * (1 + i as u64 / 7);
                let c = 3.0 * 2.4 * (n * d) as f64 * (1.0 + 0.01 * (rng.random::<f64>() * 2.0 - 1.0));
                (n, d, c.round() as u64)
            })
            .collect();
        let fit = estimate_kappa(&runs).unwrap();
        let slope = runs.iter().map(|&(n, d, c)| (n * d) as f64 * c as f64).sum::<f64>()
            / runs.iter().map(|&(n, d, _)| ((n * d) as f64).powi(2)).sum::<f64>()
            / 3.0;
        assert!((fit.kappa - slope).abs() < 1e-9 * slope);
        assert!((fit.kappa / 2.4 - 1.0).abs() < 0.02);
    }

    #[test]
    fn degenerate_spread_rejected() {
        assert!(estimate_kappa(&[(1, 1, 6), (2, 1, 12)]).is_err());
        assert!(estimate_kappa(&[(10, 10, 600), (11, 10, 660), (12, 10, 720)]).is_err());
    }

    #[test]
    fn doubling_tokens_doubles_flops() {
        let s = systems(3);
        let twice: Vec<_> = s.iter().chain(&s).cloned().collect();
        for f in crate::model::Family::ALL {
            let cfg = ModelConfig::for_family(f, 2, if f == crate::model::Family::SphericalTensor { 2 } else { 8 });
            assert_eq!(2 * count_forward_flops(&cfg, &s).unwrap(), count_forward_flops(&cfg, &twice).unwrap(), "{f}");
        }
    }

    #[test]
    fn training_cost_is_three_forwards() {
        let cfg = ModelConfig::unconstrained(2, 8);
        let r = flops_report(&cfg, &systems(4)).unwrap();
        assert_eq!(r.train_flops, 3 * count_forward_flops(&cfg, &systems(4)).unwrap());
        assert!((r.forward_per_token * r.tokens as f64 - count_forward_flops(&cfg, &systems(4)).unwrap() as f64).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_cost_is_near_six_nd() {
        let s = systems(4);
        let cfg = ModelConfig::unconstrained(3, 256);
        let r = flops_report(&cfg, &s).unwrap();
        let six_nd = 6.0 * r.n_params as f64 * r.tokens as f64;
        assert!((r.train_flops as f64 / six_nd - 1.0).abs() < 0.25, "{}", r.train_flops as f64 / six_nd);
    }
}
