//! Percentile bootstrap.
//!
//! Replicate `b` draws its resample from a ChaCha8 stream seeded with `seed`
//! and stream id `b`, so replicates can be computed in any order (or in
//! parallel) and still reproduce the same interval.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Statistic of replicate `replicate`: the records resampled with replacement.
pub fn bootstrap_replicate<R, F>(records: &[R], statistic: &F, seed: u64, replicate: u64) -> f64
where
    F: Fn(&[&R]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let n = records.len() as u64;
    let resample: Vec<&R> = (0..n).map(|_| &records[rng.random_range(0..n) as usize]).collect();
    statistic(&resample)
}

/// Quantile `q` of `sorted` by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            if frac == 0.0 {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[hi] - sorted[lo])
            }
        }
    }
}

/// Central 95% interval from a set of replicate values.
pub fn interval_from_replicates(point: f64, mut replicates: Vec<f64>) -> Interval {
    replicates.sort_by(f64::total_cmp);
    Interval { point, ci_low: percentile(&replicates, 0.025), ci_high: percentile(&replicates, 0.975) }
}

/// Point estimate on the full data plus a 95% percentile-bootstrap interval
/// from `replicates` resamples.
pub fn bootstrap_ci<R, F>(records: &[R], statistic: F, replicates: usize, seed: u64) -> Result<Interval, MetricError>
where
    F: Fn(&[&R]) -> f64,
{
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if replicates == 0 {
        return Err(MetricError::ZeroReplicates);
    }
    let all: Vec<&R> = records.iter().collect();
    let point = statistic(&all);
    let values = (0..replicates as u64).map(|b| bootstrap_replicate(records, &statistic, seed, b)).collect();
    Ok(interval_from_replicates(point, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mean(xs: &[&f64]) -> f64 {
        xs.iter().copied().sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn constant_data_has_zero_width() {
        let data = vec![0.75; 25];
        let ci = bootstrap_ci(&data, mean, 200, 3).unwrap();
        assert_eq!(ci, Interval { point: 0.75, ci_low: 0.75, ci_high: 0.75 });
        // every resample of constant data is the same multiset, so the width is
        // exactly zero even when the mean itself carries rounding error
        let ci = bootstrap_ci(&[0.7; 25], mean, 200, 3).unwrap();
        assert_eq!((ci.ci_low, ci.ci_high), (ci.point, ci.point));
    }

    #[test]
    fn seeded_determinism() {
        let data: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let a = bootstrap_ci(&data, mean, 300, 42).unwrap();
        assert_eq!(a, bootstrap_ci(&data, mean, 300, 42).unwrap());
        assert_ne!(a, bootstrap_ci(&data, mean, 300, 43).unwrap());
    }

    #[test]
    fn errors() {
        assert_eq!(bootstrap_ci::<f64, _>(&[], mean, 10, 0), Err(MetricError::EmptyInput));
        assert_eq!(bootstrap_ci(&[1.0], mean, 0, 0), Err(MetricError::ZeroReplicates));
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 1.0), 5.0);
        assert_eq!(percentile(&xs, 0.025), 1.1);
        assert_eq!(percentile(&[9.0], 0.3), 9.0);
    }

    #[test]
    fn replicate_order_does_not_matter() {
        let data: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let forward: Vec<f64> = (0..20).map(|b| bootstrap_replicate(&data, &mean, 5, b)).collect();
        let backward: Vec<f64> = (0..20).rev().map(|b| bootstrap_replicate(&data, &mean, 5, b)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }
}
