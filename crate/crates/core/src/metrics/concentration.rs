use crate::error::{Error, Result};

/// Gini coefficient `sum_i (2i - n - 1) x_(i) / (n sum x)` over ascending
/// values, equal to the mean absolute difference over twice the mean.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("gini needs finite nonnegative values".into()));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("gini of an all-zero vector".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let acc: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((acc / (n * total)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_and_one_hot() {
        assert_eq!(gini(&[3.0; 7]).unwrap(), 0.0);
        let mut v = vec![0.0; 8];
        v[3] = 2.0;
        assert!((gini(&v).unwrap() - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid() {
        assert!(gini(&[]).is_err());
        assert!(gini(&[0.0, 0.0]).is_err());
        assert!(gini(&[1.0, -0.1]).is_err());
    }

    proptest! {
        #[test]
        fn scale_invariant(v in prop::collection::vec(0.0f64..10.0, 2..50), c in 0.01f64..100.0) {
            prop_assume!(v.iter().sum::<f64>() > 0.0);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let a = gini(&v).unwrap();
            prop_assert!((a - gini(&scaled).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&a));
        }
    }
}
