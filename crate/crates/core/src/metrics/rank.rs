use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub rho: f64,
    pub n: usize,
    /// Two-sided p-value from the t approximation.
    pub p_value: f64,
}

/// 1-based ranks, ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation. A constant input makes rho undefined and is
/// reported as [`Error::Undefined`].
pub fn spearman(a: &[f64], b: &[f64]) -> Result<RankCorrelation> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    let rho = pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Undefined("spearman of a constant vector".into()))?;
    let n = a.len();
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(RankCorrelation { rho, n, p_value })
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// `|topk(a) ∩ topk(b)| / k`, ties broken by lower index.
pub fn topk_overlap(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    if k == 0 || k > a.len() {
        return Err(Error::InvalidArgument(format!("k = {k} must be in [1, {}]", a.len())));
    }
    let ta = crate::metrics::top_k_indices(a, k);
    let tb = crate::metrics::top_k_indices(b, k);
    let common = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(common as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_reversal() {
        let a = [1.0, 5.0, 2.0, 8.0, 3.0];
        assert_eq!(spearman(&a, &a).unwrap().rho, 1.0);
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(spearman(&a, &rev).unwrap().rho, -1.0);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn constant_input_is_undefined() {
        assert!(matches!(
            spearman(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::Undefined(_))
        ));
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn p_value_small_for_strong_correlation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| v + if (*v as usize) % 3 == 0 { 3.0 } else { 0.0 })
            .collect();
        let r = spearman(&a, &b).unwrap();
        assert!(r.p_value < 1e-6 && r.rho > 0.9);
    }

    #[test]
    fn overlap_cases() {
        let a = [5.0, 4.0, 3.0, 2.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(topk_overlap(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(topk_overlap(&a, &b, 2).unwrap(), 0.0);
        assert!(topk_overlap(&a, &b, 0).is_err());
        assert!(topk_overlap(&a, &b, 6).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_invariant(a in prop::collection::vec(-100.0f64..100.0, 3..40), seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v * ((i as u64 * 7 + seed) % 5) as f64 - i as f64).collect();
            if let (Ok(ab), Ok(ba)) = (spearman(&a, &b), spearman(&b, &a)) {
                prop_assert_eq!(ab.rho, ba.rho);
                let ta: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
                let t = spearman(&ta, &b).unwrap();
                prop_assert!((t.rho - ab.rho).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ab.rho));
                prop_assert!((0.0..=1.0).contains(&ab.p_value));
            }
        }
    }
}
