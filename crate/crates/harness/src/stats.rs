//! Aggregate statistics: inter-quartile mean, bootstrap bands, Wilson
//! intervals.

use rand::Rng;

use cppo_core::rng::{stream, Purpose};

use crate::error::{HarnessError, Result};

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.96;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Percentile `p ∈ [0, 100]` of ascending `sorted` by linear interpolation
/// between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean of the scores lying within the 25th–75th percentiles, bounds
/// included. When no score falls inside (two distinct scores) the band's
/// midpoint is returned.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(HarnessError::Runtime("inter-quartile mean of no scores".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q3) = (percentile(&s, 25.0), percentile(&s, 75.0));
    let kept: Vec<f64> = s.into_iter().filter(|v| *v >= q1 && *v <= q3).collect();
    if kept.is_empty() {
        return Ok(0.5 * (q1 + q3));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// 95% percentile-bootstrap interval of the IQM, widened if needed so it
/// contains the point estimate.
pub fn bootstrap_iqm_ci(scores: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    let point = iqm(scores)?;
    if scores.len() == 1 {
        return Ok((point, point));
    }
    let mut rng = stream(seed, Purpose::Bootstrap, 0);
    let mut stats = Vec::with_capacity(resamples);
    let mut sample = vec![0.0; scores.len()];
    for _ in 0..resamples {
        for s in sample.iter_mut() {
            *s = scores[rng.gen_range(0..scores.len())];
        }
        stats.push(iqm(&sample)?);
    }
    stats.sort_by(f64::total_cmp);
    let lo = percentile(&stats, 2.5).min(point);
    let hi = percentile(&stats, 97.5).max(point);
    Ok((lo, hi))
}

/// Wilson score interval for `successes` out of `n` trials at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}
