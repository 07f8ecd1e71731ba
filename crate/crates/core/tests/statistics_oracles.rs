use std::collections::HashSet;

use gradval_core::metrics::{bh_fdr, gini, pr_auc, spearman, topk_overlap, wilcoxon_signed_rank};
use proptest::prelude::*;

fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let tied = v.iter().filter(|&&y| y == x).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

fn naive_spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (naive_ranks(a), naive_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn naive_topk(v: &[f64], k: usize) -> HashSet<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap().then(i.cmp(&j)));
    idx.into_iter().take(k).collect()
}

fn naive_gini(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let mad: f64 = v.iter().flat_map(|a| v.iter().map(move |b| (a - b).abs())).sum::<f64>() / (n * n);
    mad / (2.0 * mu)
}

fn naive_pr_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut cuts = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for c in cuts {
        let (mut tp, mut flagged) = (0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= c {
                flagged += 1.0;
                tp += f64::from(u8::from(*l));
            }
        }
        if curve.is_empty() {
            curve.push((0.0, tp / flagged));
        }
        curve.push((tp / pos, tp / flagged));
    }
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

fn naive_bh(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len() as f64;
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = sorted
        .iter()
        .enumerate()
        .filter(|(k, &v)| v <= (*k as f64 + 1.0) * q / m)
        .map(|(_, &v)| v)
        .next_back();
    p.iter().map(|&v| cut.is_some_and(|c| v <= c)).collect()
}

fn naive_wilcoxon_exact(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let ranks = naive_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let at_least = (0u32..1 << n)
        .filter(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() >= w - 1e-9)
        .count();
    (w, at_least as f64 / f64::from(1u32 << n))
}

fn tied(len: std::ops::Range<usize>, levels: i32) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0..levels).prop_map(f64::from), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spearman_matches_naive((a, b) in (3usize..30).prop_flat_map(|n| (tied(n..n + 1, 6), tied(n..n + 1, 6)))) {
        match (spearman(&a, &b), naive_spearman(&a, &b)) {
            (Ok(r), Some(o)) => prop_assert!((r.rho - o).abs() <= 1e-12),
            (Err(_), None) => {}
            (r, o) => prop_assert!(false, "{r:?} vs {o:?}"),
        }
    }

    #[test]
    fn topk_overlap_matches_naive(
        (a, b, k) in (1usize..30).prop_flat_map(|n| (tied(n..n + 1, 5), tied(n..n + 1, 5), 1..=n))
    ) {
        let expect = naive_topk(&a, k).intersection(&naive_topk(&b, k)).count() as f64 / k as f64;
        prop_assert_eq!(topk_overlap(&a, &b, k).unwrap(), expect);
    }

    #[test]
    fn gini_matches_mean_difference(v in prop::collection::vec(0.0f64..100.0, 1..40)) {
        prop_assume!(v.iter().any(|&x| x > 0.0));
        prop_assert!((gini(&v).unwrap() - naive_gini(&v)).abs() <= 1e-12);
    }

    #[test]
    fn pr_auc_matches_threshold_sweep(
        (scores, mut labels) in (3usize..40).prop_flat_map(|n| (tied(n..n + 1, 8), prop::collection::vec(any::<bool>(), n)))
    ) {
        labels[0] = true;
        labels[1] = false;
        prop_assert!((pr_auc(&scores, &labels).unwrap() - naive_pr_auc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn bh_matches_naive(p in prop::collection::vec((0u32..40).prop_map(|k| f64::from(k) / 400.0), 1..30), q in 0.01f64..0.3) {
        prop_assert_eq!(bh_fdr(&p, q).unwrap(), naive_bh(&p, q));
    }

    #[test]
    fn wilcoxon_matches_enumeration(d in prop::collection::vec((-5i32..8).prop_map(|k| f64::from(k) * 0.25), 6..13)) {
        prop_assume!(d.iter().filter(|&&v| v != 0.0).count() >= 6);
        let w = wilcoxon_signed_rank(&d).unwrap();
        let (nw, np) = naive_wilcoxon_exact(&d);
        prop_assert!(w.exact);
        prop_assert_eq!(w.w_plus, nw);
        prop_assert!((w.p_value - np).abs() <= 1e-12);
    }
}
