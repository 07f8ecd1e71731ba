use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::metrics::rank::average_ranks;

/// Largest sample size tested by exact enumeration of the null distribution.
pub const EXACT_MAX_N: usize = 12;
pub const WILCOXON_MIN_N: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Nonzero samples used.
    pub n: usize,
    /// Sum of ranks of positive samples.
    pub w_plus: f64,
    /// One-sided p-value for a positive shift.
    pub p_value: f64,
    pub exact: bool,
}

/// One-sided Wilcoxon signed-rank test against a positive shift.
///
/// Zeros are dropped. Up to [`EXACT_MAX_N`] samples the null distribution is
/// enumerated exactly (ties included); above that the normal approximation
/// with tie-corrected variance is used, without continuity correction.
pub fn wilcoxon_signed_rank(samples: &[f64]) -> Result<Wilcoxon> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let d: Vec<f64> = samples.iter().copied().filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n < WILCOXON_MIN_N {
        return Err(Error::TooFewSamples {
            needed: WILCOXON_MIN_N,
            got: n,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if n <= EXACT_MAX_N {
        // doubled ranks are integers even with ties
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let observed = (2.0 * w_plus).round() as usize;
        let tail: u64 = counts[observed..].iter().sum();
        let p_value = tail as f64 / (1u64 << n) as f64;
        return Ok(Wilcoxon {
            n,
            w_plus,
            p_value,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let mut e = k + 1;
        while e < n && sorted[e] == sorted[k] {
            e += 1;
        }
        let t = (e - k) as f64;
        tie_term += t * t * t - t;
        k = e;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    let p_value = Normal::standard().sf(z);
    Ok(Wilcoxon {
        n,
        w_plus,
        p_value,
        exact: false,
    })
}

/// Benjamini-Hochberg step-up procedure at level `q`.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level {q} outside (0, 1]")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&i| p_values[order[i - 1]] <= i as f64 / m as f64 * q);
    let mut reject = vec![false; m];
    if let Some(c) = cutoff {
        for &k in &order[..c] {
            reject[k] = true;
        }
    }
    Ok(reject)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_ten() {
        let w = wilcoxon_signed_rank(&(1..=10).map(|i| i as f64 * 0.3).collect::<Vec<_>>()).unwrap();
        assert!(w.exact);
        assert_eq!(w.p_value, 1.0 / 1024.0);
    }

    #[test]
    fn symmetric_pairs_are_null() {
        let s: Vec<f64> = (1..=10).flat_map(|i| [i as f64, -(i as f64)]).collect();
        let w = wilcoxon_signed_rank(&s).unwrap();
        assert!(!w.exact);
        assert!((w.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_after_zeros() {
        assert!(matches!(
            wilcoxon_signed_rank(&[0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 5.0]),
            Err(Error::TooFewSamples { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn shifted_gaussian_detected() {
        use crate::rng::{self, tag};
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut hits = 0;
        for s in 0..50 {
            let mut r = rng::stream(s, tag::SIMULATION, 0);
            let x: Vec<f64> = (0..20).map(|_| 1.0 + r.sample::<f64, _>(StandardNormal)).collect();
            if wilcoxon_signed_rank(&x).unwrap().p_value < 0.01 {
                hits += 1;
            }
        }
        assert!(hits >= 40, "{hits}");
    }

    #[test]
    fn bh_cases() {
        assert_eq!(bh_fdr(&[0.0; 4], 0.05).unwrap(), vec![true; 4]);
        assert_eq!(bh_fdr(&[1.0; 4], 0.05).unwrap(), vec![false; 4]);
        assert_eq!(
            bh_fdr(&[0.01, 0.02, 0.30, 0.04], 0.05).unwrap(),
            vec![true, true, false, false]
        );
        assert!(bh_fdr(&[1.2], 0.05).is_err());
        assert!(bh_fdr(&[0.2], 0.0).is_err());
    }
}
