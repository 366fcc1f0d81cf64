//! `L(N, D) = L_∞ + A·N^{−α} + B·D^{−β}` fitted to `(N, D, L)` triples.

use super::bootstrap::BootstrapSummary;
use super::lsq::minimize;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Distinct model sizes and data sizes a fit needs.
pub const MIN_DISTINCT: usize = 4;
/// Starting exponents, crossed for `α` and `β` and tried in this order.
pub const EXPONENT_STARTS: [f64; 5] = [0.1, 0.3, 0.5, 0.8, 1.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumPowerLawFit {
    pub l_inf: f64,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l_inf_fixed: bool,
    /// Sum of squared log-loss residuals.
    pub residual: f64,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapSummary>,
}

impl SumPowerLawFit {
    pub const PARAM_NAMES: [&'static str; 5] = ["L_inf", "A", "B", "alpha", "beta"];

    pub fn params(&self) -> Vec<f64> {
        vec![self.l_inf, self.a, self.b, self.alpha, self.beta]
    }

    pub fn predict(&self, n: f64, d: f64) -> f64 {
        self.l_inf + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Non-negative coefficients of `L − L_∞ ≈ A·x + B·y`, relative least squares.
fn linear_start(triples: &[(f64, f64, f64)], l_inf: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(n, d, l) in triples {
        let w = 1.0 / (l * l);
        let (x, y, t) = (n.powf(-alpha), d.powf(-beta), l - l_inf);
        sxx += w * x * x;
        sxy += w * x * y;
        syy += w * y * y;
        sxt += w * x * t;
        syt += w * y * t;
    }
    let det = sxx * syy - sxy * sxy;
    let (mut a, mut b) = ((syy * sxt - sxy * syt) / det, (sxx * syt - sxy * sxt) / det);
    if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        // Split the mean loss evenly between the two terms.
        a = 0.5 * sxt / sxx;
        b = 0.5 * syt / syy;
    }
    (a.max(1e-12), b.max(1e-12))
}

/// Fits the separable law on log-loss residuals from every `(α, β)` start in
/// [`EXPONENT_STARTS`]; the lowest residual wins and ties keep the earlier start.
/// `fix_l_inf = None` fits the floor too.
pub fn fit_sum_power_law(triples: &[(f64, f64, f64)], fix_l_inf: Option<f64>) -> Result<SumPowerLawFit> {
    let n_distinct = distinct(triples.iter().map(|t| t.0));
    let d_distinct = distinct(triples.iter().map(|t| t.1));
    if n_distinct < MIN_DISTINCT || d_distinct < MIN_DISTINCT {
        return Err(Error::NonIdentifiable(format!("need at least {MIN_DISTINCT} distinct N and D, got {n_distinct} and {d_distinct}")));
    }
    if triples.iter().any(|&(n, d, l)| !(n > 0.0 && d > 0.0 && l > 0.0) || !l.is_finite()) {
        return Err(Error::NonIdentifiable("N, D and L must be positive and finite".into()));
    }
    if let Some(v) = fix_l_inf {
        if triples.iter().any(|t| t.2 <= v) || v < 0.0 {
            return Err(Error::NonIdentifiable(format!("fixed L_inf = {v} must be non-negative and below every loss")));
        }
    }
    let logs: Vec<(f64, f64, f64)> = triples.iter().map(|&(n, d, l)| (n.ln(), d.ln(), l.ln())).collect();
    let free = fix_l_inf.is_none();
    let floor = fix_l_inf.unwrap_or(0.0);

    // Parameters: ln A, ln B, α, β, and s with L_inf = s² when free.
    let model = |p: &[f64]| {
        let mut r = Vec::with_capacity(logs.len());
        let mut j = DMatrix::zeros(logs.len(), p.len());
        let l_inf = if free { p[4] * p[4] } else { floor };
        for (i, &(ln_n, ln_d, ln_l)) in logs.iter().enumerate() {
            let ta = (p[0] - p[2] * ln_n).exp();
            let tb = (p[1] - p[3] * ln_d).exp();
            let pred = l_inf + ta + tb;
            if !(pred > 0.0) || !pred.is_finite() {
                return None;
            }
            r.push(pred.ln() - ln_l);
            j[(i, 0)] = ta / pred;
            j[(i, 1)] = tb / pred;
            j[(i, 2)] = -ln_n * ta / pred;
            j[(i, 3)] = -ln_d * tb / pred;
            if free {
                j[(i, 4)] = 2.0 * p[4] / pred;
            }
        }
        Some((r, j))
    };

    let min_loss = triples.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    let start_floor = if free { 0.5 * min_loss } else { floor };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last_reason = String::new();
    for &alpha in &EXPONENT_STARTS {
        for &beta in &EXPONENT_STARTS {
            let (a, b) = linear_start(triples, start_floor, alpha, beta);
            let mut start = vec![a.ln(), b.ln(), alpha, beta];
            if free {
                start.push(start_floor.sqrt());
            }
            let sol = minimize(&start, &model);
            let valid = sol.converged && sol.params[2] > 0.0 && sol.params[3] > 0.0;
            if valid && best.as_ref().is_none_or(|bst| sol.cost < bst.1) {
                best = Some((sol.params, sol.cost));
            } else if !sol.converged {
                last_reason = sol.reason;
            }
        }
    }
    let Some((p, residual)) = best else {
        return Err(Error::FitFailed(format!("no start reached positive exponents; last termination: {last_reason}")));
    };
    Ok(SumPowerLawFit {
        l_inf: if free { p[4] * p[4] } else { floor },
        a: p[0].exp(),
        b: p[1].exp(),
        alpha: p[2],
        beta: p[3],
        l_inf_fixed: !free,
        residual,
        n_points: triples.len(),
        ci: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) const ALPHA: f64 = 0.276;
    pub(crate) const BETA: f64 = 0.311;

    fn truth() -> SumPowerLawFit {
        SumPowerLawFit {
            l_inf: 0.0,
            a: 10f64.powf(1.356),
            b: 10f64.powf(2.194),
            alpha: ALPHA,
            beta: BETA,
            l_inf_fixed: true,
            residual: 0.0,
            n_points: 0,
            ci: None,
        }
    }

    fn grid(fit: &SumPowerLawFit, noise: f64, seed: u64) -> Vec<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for i in 0..6 {
            let n = 10f64.powf(5.0 + 0.6 * i as f64);
            for k in 1..=10 {
                let d = 1e9 * k as f64 / 10.0;
                out.push((n, d, fit.predict(n, d) * (1.0 + noise * eps.sample(&mut rng))));
            }
        }
        out
    }

    #[test]
    fn noiseless_recovery() {
        let t = truth();
        let fit = fit_sum_power_law(&grid(&t, 0.0, 0), Some(0.0)).unwrap();
        assert!((fit.alpha - ALPHA).abs() < 1e-4 && (fit.beta - BETA).abs() < 1e-4, "{fit:?}");
        assert!((fit.a.log10() - 1.356).abs() < 1e-4 && (fit.b.log10() - 2.194).abs() < 1e-4);
    }

    #[test]
    fn free_floor_recovered() {
        let mut t = truth();
        t.l_inf = 0.05;
        let fit = fit_sum_power_law(&grid(&t, 0.0, 0), None).unwrap();
        assert!((fit.alpha - ALPHA).abs() < 1e-3 && (fit.l_inf - 0.05).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn swapping_roles_mirrors_the_fit() {
        let sym = SumPowerLawFit { a: 30.0, b: 30.0, alpha: 0.3, beta: 0.3, ..truth() };
        let data: Vec<_> = grid(&sym, 0.0, 0).into_iter().map(|(n, d, l)| (n, d, l * (1.0 + 0.003 * (n * d).ln().sin()))).collect();
        let swapped: Vec<_> = data.iter().map(|&(n, d, l)| (d, n, l)).collect();
        let f = fit_sum_power_law(&data, Some(0.0)).unwrap();
        let g = fit_sum_power_law(&swapped, Some(0.0)).unwrap();
        assert!((f.residual - g.residual).abs() < 1e-12 * (1.0 + f.residual));
        assert!((f.alpha - g.beta).abs() < 1e-6 && (f.beta - g.alpha).abs() < 1e-6);
    }

    #[test]
    fn reordering_leaves_the_fit_unchanged() {
        let data = grid(&truth(), 0.01, 4);
        let mut rev = data.clone();
        rev.reverse();
        let (f, g) = (fit_sum_power_law(&data, Some(0.0)).unwrap(), fit_sum_power_law(&rev, Some(0.0)).unwrap());
        assert!((f.alpha - g.alpha).abs() < 1e-8 && (f.beta - g.beta).abs() < 1e-8);
    }

    #[test]
    fn single_model_size_is_not_identifiable() {
        let data: Vec<_> = grid(&truth(), 0.0, 0).into_iter().filter(|t| t.0 == 1e5).collect();
        assert!(matches!(fit_sum_power_law(&data, Some(0.0)), Err(Error::NonIdentifiable(_))));
        let data: Vec<_> = grid(&truth(), 0.0, 0).into_iter().filter(|t| t.1 == 1e9).collect();
        assert!(matches!(fit_sum_power_law(&data, Some(0.0)), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn noisy_fit_is_close() {
        for seed in 0..5 {
            let fit = fit_sum_power_law(&grid(&truth(), 0.01, seed), Some(0.0)).unwrap();
            assert!((fit.alpha - ALPHA).abs() < 0.02 && (fit.beta - BETA).abs() < 0.02, "{fit:?}");
        }
    }
}
