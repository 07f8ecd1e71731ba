use crate::error::{Error, Result};

/// Indices of the `k` largest scores, ties broken by lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Degenerate(
            "labels need at least one positive and one negative".into(),
        ));
    }
    Ok(())
}

/// `(recall, precision)` after each group of tied scores, in descending score
/// order, preceded by `(0, precision of the first group)`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_labels(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let mut e = k;
        while e < order.len() && scores[order[e]] == scores[order[k]] {
            tp += labels[order[e]] as usize;
            e += 1;
        }
        seen += e - k;
        let point = (tp as f64 / total_pos, tp as f64 / seen as f64);
        if points.is_empty() {
            points.push((0.0, point.1));
        }
        points.push(point);
        k = e;
    }
    Ok(points)
}

/// Area under the precision-recall curve by the trapezoid rule over recall.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    Ok(curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// Fraction of scenarios with at least one attacker among the top `k`.
pub fn topk_hit_rate(scores: &[Vec<f64>], attackers: &[Vec<usize>], k: usize) -> Result<f64> {
    if scores.len() != attackers.len() || scores.is_empty() {
        return Err(Error::InvalidArgument(
            "need one attacker set per non-empty scenario list".into(),
        ));
    }
    let mut hits = 0usize;
    for (s, a) in scores.iter().zip(attackers) {
        if k == 0 || k > s.len() {
            return Err(Error::InvalidArgument(format!("k = {k} must be in [1, {}]", s.len())));
        }
        if top_k_indices(s, k).iter().any(|i| a.contains(i)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        let auc = pr_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn worked_four_point_example() {
        // descending: 0.9(+) 0.7(-) 0.5(+) 0.3(-)
        // points: (0,1) (.5,1) (.5,.5) (1,2/3) (1,.5)
        let auc = pr_auc(&[0.5, 0.9, 0.3, 0.7], &[true, true, false, false]).unwrap();
        let expect = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((auc - expect).abs() < 1e-15);
    }

    #[test]
    fn all_tied_gives_prevalence() {
        let auc = pr_auc(&[1.0; 8], &[true, false, false, false, true, false, false, false]).unwrap();
        assert_eq!(auc, 0.25);
    }

    #[test]
    fn degenerate_labels() {
        assert!(pr_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(pr_auc(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn hit_rates() {
        let s = vec![vec![0.1, 0.9, 0.3], vec![0.5, 0.4, 0.1]];
        assert_eq!(topk_hit_rate(&s, &[vec![1], vec![0]], 1).unwrap(), 1.0);
        assert_eq!(topk_hit_rate(&s, &[vec![0], vec![2]], 2).unwrap(), 0.0);
        assert!(topk_hit_rate(&s, &[vec![0], vec![2]], 4).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
    }

    proptest! {
        #[test]
        fn invariant_to_monotone_transform(
            s in prop::collection::vec(-5.0f64..5.0, 4..30),
            flips in prop::collection::vec(any::<bool>(), 30),
        ) {
            let labels: Vec<bool> = flips[..s.len()].to_vec();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let t: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let a = pr_auc(&s, &labels).unwrap();
            prop_assert_eq!(a, pr_auc(&t, &labels).unwrap());
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
