//! Seed-level aggregation: means and percentile bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const RESAMPLES: usize = 1000;

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// 95% percentile bootstrap interval of the mean over `RESAMPLES`
/// resamples drawn from a ChaCha8 stream seeded with `seed`.
pub fn bootstrap_ci(xs: &[f64], seed: u64) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut means: Vec<f64> = (0..RESAMPLES)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * RESAMPLES as f64) as usize).min(RESAMPLES - 1)];
    Some((at(0.025), at(0.975)))
}

/// Mean and interval of one group of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Aggregate {
    pub fn of(xs: &[f64], seed: u64) -> Self {
        let ci = bootstrap_ci(xs, seed);
        Self { runs: xs.len(), mean: mean(xs), ci_low: ci.map(|c| c.0), ci_high: ci.map(|c| c.1) }
    }
}
