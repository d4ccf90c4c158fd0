//! Correlation and interval estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: zero variance")]
    Degenerate,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn students_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("df is positive")
}

/// Sample Pearson r with a two-sided p-value from the t transform.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= f64::EPSILON {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        (2.0 * (1.0 - students_t(df).cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson on average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Two-sided critical value t_{1-alpha/2, df}.
pub fn t_critical(df: usize, confidence: f64) -> f64 {
    students_t(df as f64).inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    /// Fewer than two observations or zero spread; the interval collapses to the mean.
    pub degenerate: bool,
}

fn sample_sd(xs: &[f64], m: f64) -> f64 {
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// mean ± t_{0.975, n-1} · s / √n.
pub fn t_interval(xs: &[f64], confidence: f64) -> Result<Interval, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let m = mean(xs);
    if xs.len() < 2 {
        return Ok(Interval {
            mean: m,
            low: m,
            high: m,
            degenerate: true,
        });
    }
    let sd = sample_sd(xs, m);
    let half = t_critical(xs.len() - 1, confidence) * sd / (xs.len() as f64).sqrt();
    Ok(Interval {
        mean: m,
        low: m - half,
        high: m + half,
        degenerate: sd == 0.0,
    })
}

/// Percentile bootstrap of the mean.
pub fn bootstrap_interval(xs: &[f64], confidence: f64, resamples: usize, seed: u64) -> Result<Interval, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let m = mean(xs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    let (low, high) = (at(alpha), at(1.0 - alpha));
    Ok(Interval {
        mean: m,
        low,
        high,
        degenerate: xs.len() < 2 || low == high,
    })
}
