//! Compute-optimal split of a budget `C = ξ·N·D` between model and data, and
//! the check that it agrees with a directly fitted frontier.

use super::power_law::PowerLawFit;
use super::sum_law::SumPowerLawFit;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// FLOPs per PFLOP, the unit compute is reported in.
pub const PFLOPS: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Model-size exponent, `N* ∝ C^a`.
    pub a: f64,
    /// Data exponent, `D* ∝ C^b`.
    pub b: f64,
    pub g: f64,
    /// FLOPs per parameter-token, `3κ`.
    pub xi: f64,
    pub gamma_c: f64,
    /// Prefactor of the implied frontier with `C` in FLOPs.
    pub f_c: f64,
    /// Carried over from the sum law so the implied frontier has its floor.
    pub l_inf: f64,
}

impl AllocationResult {
    pub fn optimal_params(&self, c: f64) -> f64 {
        self.g * self.xi.powf(-self.a) * c.powf(self.a)
    }

    pub fn optimal_tokens(&self, c: f64) -> f64 {
        self.xi.powf(-self.b) * c.powf(self.b) / self.g
    }

    /// Loss along the optimal path, `L_∞ + F_c·C^{−γ_c}`.
    pub fn frontier_loss(&self, c: f64) -> f64 {
        self.l_inf + self.f_c * c.powf(-self.gamma_c)
    }
}

/// Closed-form optimum of the sum law under `3κ·N·D = C`.
pub fn allocate(fit: &SumPowerLawFit, kappa: f64) -> Result<AllocationResult> {
    let (alpha, beta) = (fit.alpha, fit.beta);
    if !(alpha > 0.0 && beta > 0.0 && fit.a > 0.0 && fit.b > 0.0) {
        return Err(Error::Config("sum law needs positive A, B, α and β".into()));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Config(format!("κ must be positive, got {kappa}")));
    }
    let s = alpha + beta;
    // The larger share is divided out and the smaller taken as its complement,
    // which is exact in floating point and makes a + b = 1 hold bit for bit.
    let (a, b) = if beta >= alpha {
        let a = beta / s;
        (a, 1.0 - a)
    } else {
        let b = alpha / s;
        (1.0 - b, b)
    };
    let g = (alpha * fit.a / (beta * fit.b)).powf(1.0 / s);
    let xi = 3.0 * kappa;
    let gamma_c = alpha * beta / s;
    let f_c = fit.a * g.powf(-alpha) * xi.powf(gamma_c) + fit.b * g.powf(beta) * xi.powf(gamma_c);
    Ok(AllocationResult { a, b, g, xi, gamma_c, f_c, l_inf: fit.l_inf })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub gamma_frontier: f64,
    pub gamma_derived: f64,
    pub gamma_gap: f64,
    /// Prefactors with compute in PFLOPs.
    pub f_frontier: f64,
    pub f_derived: f64,
    pub f_gap: f64,
    /// `|F_frontier − F_derived| / F_derived`.
    pub f_relative_gap: f64,
    pub gamma_tolerance: f64,
    pub f_relative_tolerance: f64,
    pub passed: bool,
}

pub const GAMMA_TOLERANCE: f64 = 0.01;
pub const F_RELATIVE_TOLERANCE: f64 = 0.25;

/// Compares a frontier fitted on FLOPs with the frontier the allocation implies.
pub fn consistency_check(frontier: &PowerLawFit, alloc: &AllocationResult, gamma_tolerance: f64, f_relative_tolerance: f64) -> ConsistencyReport {
    let f_frontier = frontier.prefactor_in_units(PFLOPS);
    let f_derived = alloc.f_c * PFLOPS.powf(-alloc.gamma_c);
    let gamma_gap = (frontier.gamma - alloc.gamma_c).abs();
    let f_gap = (f_frontier - f_derived).abs();
    let f_relative_gap = f_gap / f_derived;
    ConsistencyReport {
        gamma_frontier: frontier.gamma,
        gamma_derived: alloc.gamma_c,
        gamma_gap,
        f_frontier,
        f_derived,
        f_gap,
        f_relative_gap,
        gamma_tolerance,
        f_relative_tolerance,
        passed: gamma_gap < gamma_tolerance && f_relative_gap < f_relative_tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::frontier::{frontier_of_points, Axis};
    use crate::fit::power_law::fit_power_law;
    use proptest::prelude::*;

    fn law(a: f64, b: f64, alpha: f64, beta: f64) -> SumPowerLawFit {
        SumPowerLawFit { l_inf: 0.0, a, b, alpha, beta, l_inf_fixed: true, residual: 0.0, n_points: 0, ci: None }
    }

    fn table_law() -> SumPowerLawFit {
        law(10f64.powf(1.356), 10f64.powf(2.194), 0.276, 0.311)
    }

    /// Golden-section minimum of the loss over `ln N` along `ξND = C`.
    pub(crate) fn brute_force_params(fit: &SumPowerLawFit, xi: f64, c: f64) -> f64 {
        let loss = |u: f64| fit.predict(u.exp(), c / (xi * u.exp()));
        let (mut lo, mut hi) = (-10.0, c.ln() + 10.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let (m1, m2) = (hi - r * (hi - lo), lo + r * (hi - lo));
            if loss(m1) < loss(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    #[test]
    fn table_exponent() {
        let r = allocate(&table_law(), 2.0).unwrap();
        assert!((r.gamma_c - 0.1462).abs() < 1e-4, "{}", r.gamma_c);
        assert_eq!(r.a + r.b, 1.0);
    }

    #[test]
    fn symmetric_law_splits_evenly() {
        let r = allocate(&law(5.0, 5.0, 0.4, 0.4), 2.0).unwrap();
        assert_eq!((r.a, r.b), (0.5, 0.5));
    }

    #[test]
    fn closed_form_matches_brute_force() {
        let fit = table_law();
        let r = allocate(&fit, 2.3).unwrap();
        for e in 3..=9 {
            let c = 10f64.powi(e);
            let n = r.optimal_params(c);
            assert!((n / brute_force_params(&fit, r.xi, c) - 1.0).abs() < 1e-3);
            assert!((n * r.optimal_tokens(c) * r.xi / c - 1.0).abs() < 1e-12);
            let best = fit.predict(n, r.optimal_tokens(c));
            assert!((best / r.frontier_loss(c) - 1.0).abs() < 1e-12);
            for k in [0.5, 0.9, 1.1, 2.0] {
                assert!(fit.predict(k * n, c / (r.xi * k * n)) >= best);
            }
        }
    }

    #[test]
    fn identical_fits_agree_exactly() {
        let r = allocate(&table_law(), 2.0).unwrap();
        let frontier =
            PowerLawFit { l_inf: 0.0, f: r.f_c, gamma: r.gamma_c, variable: Axis::Flops, l_inf_fixed: true, residual: 0.0, n_points: 0, ci: None };
        let rep = consistency_check(&frontier, &r, GAMMA_TOLERANCE, F_RELATIVE_TOLERANCE);
        assert!(rep.passed && rep.gamma_gap == 0.0 && rep.f_gap == 0.0);
    }

    /// Runs of several sizes with checkpoints along `D`, losses from the law itself.
    fn runs_from(loss: impl Fn(f64, f64) -> f64, xi: f64) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for i in 0..=40 {
            let n = 10f64.powf(4.0 + 0.1 * i as f64);
            for k in 0..=80 {
                let d = 10f64.powf(5.0 + 0.075 * k as f64);
                pts.push((xi * n * d, loss(n, d)));
            }
        }
        pts
    }

    #[test]
    fn self_consistent_data_agrees() {
        let fit = table_law();
        let r = allocate(&fit, 2.0).unwrap();
        let frontier = frontier_of_points(&runs_from(|n, d| fit.predict(n, d), r.xi));
        let pl = fit_power_law(&frontier, Some(0.0), Axis::Flops).unwrap();
        let rep = consistency_check(&pl, &r, GAMMA_TOLERANCE, F_RELATIVE_TOLERANCE);
        assert!(rep.gamma_gap < 0.01 && rep.passed, "{rep:?}");
    }

    #[test]
    fn broken_law_is_flagged() {
        let fit = table_law();
        let r = allocate(&fit, 2.0).unwrap();
        // Past a knee the data exponent triples, which the sum law cannot express.
        let broken = |n: f64, d: f64| fit.a * n.powf(-fit.alpha) + fit.b * d.powf(-fit.beta) * (d / 1e7).max(1.0).powf(-0.6);
        let frontier = frontier_of_points(&runs_from(broken, r.xi));
        let pl = fit_power_law(&frontier, Some(0.0), Axis::Flops).unwrap();
        assert!(!consistency_check(&pl, &r, GAMMA_TOLERANCE, F_RELATIVE_TOLERANCE).passed);
    }

    proptest! {
        #[test]
        fn shares_sum_to_one(alpha in 0.01..3.0f64, beta in 0.01..3.0f64, kappa in 0.5..50.0f64) {
            let r = allocate(&law(3.0, 7.0, alpha, beta), kappa).unwrap();
            prop_assert_eq!(r.a + r.b, 1.0);
            prop_assert!((r.gamma_c - r.a * alpha).abs() < 1e-12);
        }
    }
}
