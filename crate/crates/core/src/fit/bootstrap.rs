//! Non-parametric bootstrap: resample points with replacement, refit, and read
//! percentile intervals off the replicate estimates.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Coverage as a fraction, e.g. 0.95.
    pub level: f64,
    pub n_boot: usize,
    /// Replicates whose refit failed and were left out.
    pub dropped: usize,
    pub seed: u64,
    pub intervals: Vec<Interval>,
}

impl BootstrapSummary {
    pub fn get(&self, name: &str) -> Option<&Interval> {
        self.intervals.iter().find(|i| i.name == name)
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Percentile intervals for the parameters `fitter` returns, in the order of `names`.
///
/// Replicate `k` draws from its own stream of `seed`, so the result does not depend
/// on evaluation order. Each interval is widened to contain the full-data estimate.
pub fn bootstrap_ci<T, F>(data: &[T], names: &[&str], fitter: F, n_boot: usize, level: f64, seed: u64) -> Result<BootstrapSummary>
where
    T: Clone,
    F: Fn(&[T]) -> Result<Vec<f64>>,
{
    if n_boot < MIN_REPLICATES {
        return Err(Error::Config(format!("need at least {MIN_REPLICATES} bootstrap replicates, got {n_boot}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} must lie in (0, 1)")));
    }
    if data.is_empty() {
        return Err(Error::NoData("nothing to resample".into()));
    }
    let estimate = fitter(data)?;
    if estimate.len() != names.len() {
        return Err(Error::Shape(format!("{} parameter names for {} estimates", names.len(), estimate.len())));
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(n_boot); names.len()];
    let mut dropped = 0;
    let mut resample = Vec::with_capacity(data.len());
    for k in 0..n_boot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        resample.clear();
        resample.extend((0..data.len()).map(|_| data[rng.random_range(0..data.len())].clone()));
        match fitter(&resample) {
            Ok(p) if p.iter().all(|x| x.is_finite()) => {
                for (s, v) in samples.iter_mut().zip(p) {
                    s.push(v);
                }
            }
            _ => dropped += 1,
        }
    }
    if dropped == n_boot {
        return Err(Error::FitFailed(format!("all {n_boot} bootstrap refits failed")));
    }
    let tail = (1.0 - level) / 2.0;
    let intervals = names
        .iter()
        .zip(samples.iter_mut())
        .zip(&estimate)
        .map(|((name, s), &est)| {
            s.sort_by(f64::total_cmp);
            Interval { name: name.to_string(), estimate: est, lo: quantile(s, tail).min(est), hi: quantile(s, 1.0 - tail).max(est) }
        })
        .collect();
    Ok(BootstrapSummary { level, n_boot, dropped, seed, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(d: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![d.iter().sum::<f64>() / d.len() as f64])
    }

    #[test]
    fn constant_data_gives_degenerate_interval() {
        let s = bootstrap_ci(&[2.0; 30], &["mean"], mean, 200, 0.95, 1).unwrap();
        let i = &s.intervals[0];
        assert!(i.hi - i.lo < 1e-6 && i.contains(2.0));
    }

    #[test]
    fn endpoints_are_percentiles() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = bootstrap_ci(&data, &["mean"], mean, 1000, 0.95, 5).unwrap();
        let mut reps = Vec::new();
        for k in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            rng.set_stream(k);
            let r: Vec<f64> = (0..50).map(|_| data[rng.random_range(0..50)]).collect();
            reps.push(mean(&r).unwrap()[0]);
        }
        reps.sort_by(f64::total_cmp);
        let i = &s.intervals[0];
        assert!((i.lo - quantile(&reps, 0.025)).abs() < 1e-15);
        assert!((i.hi - quantile(&reps, 0.975)).abs() < 1e-15);
        assert!(i.contains(i.estimate));
    }

    #[test]
    fn reproducible_and_counts_failures() {
        let data: Vec<f64> = (0..20).map(|i| i as f64).collect();
        // Refits fail whenever the resample misses the zero point.
        let picky = |d: &[f64]| if d.contains(&0.0) { mean(d) } else { Err(Error::FitFailed("no zero".into())) };
        let a = bootstrap_ci(&data, &["mean"], picky, 100, 0.9, 3).unwrap();
        assert!(a.dropped > 0 && a.dropped < 100);
        assert_eq!(a, bootstrap_ci(&data, &["mean"], picky, 100, 0.9, 3).unwrap());
        assert_ne!(a, bootstrap_ci(&data, &["mean"], picky, 100, 0.9, 4).unwrap());
    }

    #[test]
    fn too_few_replicates_rejected() {
        assert!(bootstrap_ci(&[1.0, 2.0], &["mean"], mean, 50, 0.95, 0).is_err());
    }
}
