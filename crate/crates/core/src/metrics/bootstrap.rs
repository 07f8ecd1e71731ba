use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Iid,
    Block,
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
    pub scheme: Scheme,
}

impl BootstrapCI {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Linear-interpolation quantile of ascending `sorted`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check(n_resamples: usize, level: f64) -> Result<()> {
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
    }
    Ok(())
}

fn interval(point: f64, mut stats: Vec<f64>, level: f64, scheme: Scheme) -> BootstrapCI {
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    BootstrapCI {
        point,
        lower: percentile(&stats, alpha / 2.0),
        upper: percentile(&stats, 1.0 - alpha / 2.0),
        level,
        resamples: stats.len(),
        scheme,
    }
}

/// Resample individual values with replacement. Resample `r` draws from its
/// own stream, so results do not depend on thread scheduling.
pub fn bootstrap_iid<F>(values: &[f64], statistic: F, n_resamples: usize, level: f64, seed: u64) -> Result<BootstrapCI>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(n_resamples, level)?;
    let n = values.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let stats = (0..n_resamples)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, r| {
                let mut g = rng::stream(seed, tag::BOOTSTRAP, r as u64);
                buf.clear();
                buf.extend((0..n).map(|_| values[g.random_range(0..n)]));
                statistic(buf)
            },
        )
        .collect();
    Ok(interval(statistic(values), stats, level, Scheme::Iid))
}

/// Resample whole blocks with replacement; members of a block move together.
/// `blocks` must partition `0..values.len()`.
pub fn bootstrap_block_spatial<F>(
    values: &[f64],
    blocks: &[Vec<usize>],
    statistic: F,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCI>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check(n_resamples, level)?;
    let n = values.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    if blocks.is_empty() || blocks.iter().any(|b| b.is_empty()) {
        return Err(Error::InvalidArgument("blocks must be non-empty".into()));
    }
    let mut seen = vec![false; n];
    for &k in blocks.iter().flatten() {
        if k >= n || seen[k] {
            return Err(Error::InvalidArgument("blocks do not partition the values".into()));
        }
        seen[k] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("blocks do not cover every value".into()));
    }
    let nb = blocks.len();
    let stats = (0..n_resamples)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, r| {
                let mut g = rng::stream(seed, tag::BOOTSTRAP, r as u64);
                buf.clear();
                for _ in 0..nb {
                    buf.extend(blocks[g.random_range(0..nb)].iter().map(|&k| values[k]));
                }
                statistic(buf)
            },
        )
        .collect();
    Ok(interval(statistic(values), stats, level, Scheme::Block))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_zero_width() {
        let ci = bootstrap_iid(&[2.5; 12], mean, 1000, 0.95, 1).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (2.5, 2.5, 2.5));
    }

    #[test]
    fn contains_point_for_symmetric_data() {
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 17) as f64).collect();
        let ci = bootstrap_iid(&v, mean, 2000, 0.95, 3).unwrap();
        assert!(ci.contains(ci.point));
        assert_eq!(ci.resamples, 2000);
    }

    #[test]
    fn singleton_blocks_reproduce_iid() {
        let v: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
        let blocks: Vec<Vec<usize>> = (0..25).map(|k| vec![k]).collect();
        let a = bootstrap_iid(&v, mean, 1000, 0.9, 8).unwrap();
        let b = bootstrap_block_spatial(&v, &blocks, mean, 1000, 0.9, 8).unwrap();
        assert_eq!((a.lower, a.upper), (b.lower, b.upper));
    }

    #[test]
    fn rejects_bad_inputs() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!(bootstrap_iid(&v[..2], mean, 1000, 0.95, 0).is_err());
        assert!(bootstrap_iid(&v, mean, 999, 0.95, 0).is_err());
        assert!(bootstrap_block_spatial(&v, &[vec![0, 1], vec![]], mean, 1000, 0.95, 0).is_err());
        assert!(bootstrap_block_spatial(&v, &[vec![0, 1], vec![1, 2, 3]], mean, 1000, 0.95, 0).is_err());
        assert!(bootstrap_block_spatial(&v, &[vec![0, 1]], mean, 1000, 0.95, 0).is_err());
    }

    #[test]
    fn deterministic() {
        let v: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
        assert_eq!(
            bootstrap_iid(&v, mean, 1000, 0.95, 5).unwrap(),
            bootstrap_iid(&v, mean, 1000, 0.95, 5).unwrap()
        );
    }
}
