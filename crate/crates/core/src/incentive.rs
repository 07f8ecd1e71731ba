//! Sensor selection, captured utility, budget-balanced payments and their
//! calibration against ablation utilities.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{StationGrid, TargetSpec};
use crate::metrics::bootstrap::MIN_RESAMPLES;
use crate::metrics::{gini, percentile, spearman, top_k_indices, BootstrapCI, Scheme};
use crate::rng::{self, tag};

pub const DEFAULT_BUDGET: f64 = 10_000.0;
/// Tolerance for treating a vector as a probability vector.
pub const SHARE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ig,
    Gti,
    Vg,
    Distance,
    Uniform,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Ig,
        Strategy::Gti,
        Strategy::Vg,
        Strategy::Distance,
        Strategy::Uniform,
        Strategy::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ig => "IG",
            Strategy::Gti => "GTI",
            Strategy::Vg => "VG",
            Strategy::Distance => "distance",
            Strategy::Uniform => "uniform",
            Strategy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub k: usize,
    /// Selected station positions, ascending.
    pub selected: Vec<usize>,
    pub captured: f64,
    /// `C / (K / N)`, the expected captured utility of a uniform draw.
    pub efficiency: f64,
    /// `C / C_oracle`.
    pub optimality: f64,
}

/// Inverse great-circle distance from each station to the target cell. The
/// station on the target cell itself gets `2 / d_min`, with `d_min` the
/// smallest positive distance, so it ranks strictly first.
pub fn distance_scores(stations: &StationGrid, target: &TargetSpec) -> Vec<f64> {
    let d = stations.distances_km(target.cell_latlon(stations.grid()));
    let d_min = d.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 2.0 / d_min }).collect()
}

/// Top-`k` positions by score (ties to the lower position), or a seeded
/// uniform draw without replacement when `scores` is `None`.
pub fn select(scores: Option<&[f64]>, n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!("K = {k} exceeds {n} stations")));
    }
    let mut chosen = match scores {
        Some(s) => {
            if s.len() != n {
                return Err(Error::InvalidArgument("one score per station required".into()));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite selection score".into()));
            }
            top_k_indices(s, k)
        }
        None => {
            let mut r = rng::stream(seed, tag::SELECTION, 0);
            index::sample(&mut r, n, k).into_vec()
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// `C(S) = sum_{g in S} |U_g| / sum_g |U_g|`.
pub fn captured_utility(selected: &[usize], utilities: &[f64]) -> Result<f64> {
    let total: f64 = utilities.iter().map(|u| u.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("total utility is zero".into()));
    }
    let mut seen = vec![false; utilities.len()];
    let mut acc = 0.0;
    for &g in selected {
        if g >= utilities.len() {
            return Err(Error::InvalidStation(format!("position {g}")));
        }
        if !std::mem::replace(&mut seen[g], true) {
            acc += utilities[g].abs();
        }
    }
    Ok(acc / total)
}

/// Selection by `strategy` scored against `utilities`.
pub fn evaluate_selection(
    strategy: Strategy,
    scores: Option<&[f64]>,
    utilities: &[f64],
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let n = utilities.len();
    let abs: Vec<f64> = utilities.iter().map(|u| u.abs()).collect();
    let scores = match strategy {
        Strategy::Oracle => Some(abs.as_slice()),
        Strategy::Uniform => None,
        _ => Some(scores.ok_or_else(|| Error::InvalidArgument(format!("strategy {} needs scores", strategy.name())))?),
    };
    let selected = select(scores, n, k, seed)?;
    let captured = captured_utility(&selected, &abs)?;
    let oracle = captured_utility(&select(Some(&abs), n, k, 0)?, &abs)?;
    let expected = k as f64 / n as f64;
    Ok(SelectionResult {
        strategy,
        k,
        selected,
        captured,
        efficiency: if k == 0 { 0.0 } else { captured / expected },
        optimality: if oracle > 0.0 { captured / oracle } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentAllocation {
    pub budget: f64,
    pub shares: Vec<f64>,
    pub amounts: Vec<f64>,
    pub proxy: String,
}

impl PaymentAllocation {
    /// Budget balance within `1e-9 B` and no negative payment.
    pub fn is_valid(&self) -> bool {
        let total: f64 = self.amounts.iter().sum();
        (total - self.budget).abs() <= SHARE_TOL * self.budget && self.amounts.iter().all(|&a| a >= 0.0)
    }
}

/// Probability vector proportional to nonnegative `scores`.
pub fn shares(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::InvalidArgument("scores must be finite and nonnegative".into()));
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all scores are zero".into()));
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// `p(g) = |A(g)| / sum |A| * B`.
pub fn payment(scores: &[f64], budget: f64, proxy: &str) -> Result<PaymentAllocation> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    let shares = shares(scores)?;
    let amounts = shares.iter().map(|s| s * budget).collect();
    Ok(PaymentAllocation {
        budget,
        shares,
        amounts,
        proxy: proxy.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overpayment {
    pub total: f64,
    pub underpayment: f64,
    pub per_station: Vec<f64>,
}

fn check_probability(p: &[f64], name: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (total - 1.0).abs() > SHARE_TOL {
        return Err(Error::InvalidArgument(format!("{name} is not a probability vector")));
    }
    Ok(())
}

/// `sum_g max(0, p_proxy(g) - p_true(g))`, with the matching underpayment.
pub fn overpayment(p_proxy: &[f64], p_true: &[f64]) -> Result<Overpayment> {
    if p_proxy.len() != p_true.len() {
        return Err(Error::InvalidArgument("share vectors differ in length".into()));
    }
    check_probability(p_proxy, "proxy shares")?;
    check_probability(p_true, "true shares")?;
    let per_station: Vec<f64> = p_proxy.iter().zip(p_true).map(|(a, b)| (a - b).max(0.0)).collect();
    let underpayment = p_proxy.iter().zip(p_true).map(|(a, b)| (b - a).max(0.0)).sum();
    Ok(Overpayment {
        total: per_station.iter().sum(),
        underpayment,
        per_station,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Mean `|U|` per proxy decile, lowest proxy first.
    pub decile_means: Vec<f64>,
    /// Station positions per decile.
    pub bins: Vec<Vec<usize>>,
    pub gini_ratio: f64,
    pub overpayment: f64,
    /// `(p_proxy, p_true)` per station.
    pub pairs: Vec<(f64, f64)>,
    /// Spearman between proxy and true shares; `None` when undefined.
    pub share_spearman: Option<f64>,
}

pub const N_DECILES: usize = 10;

/// Equal-count bins by ascending proxy score, ties by position, with the
/// remainder given to the lowest bins.
pub fn decile_bins(proxy: &[f64]) -> Result<Vec<Vec<usize>>> {
    let n = proxy.len();
    if n < N_DECILES {
        return Err(Error::TooFewSamples {
            needed: N_DECILES,
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proxy[a].total_cmp(&proxy[b]).then(a.cmp(&b)));
    let (base, extra) = (n / N_DECILES, n % N_DECILES);
    let mut bins = Vec::with_capacity(N_DECILES);
    let mut start = 0;
    for b in 0..N_DECILES {
        let size = base + usize::from(b < extra);
        bins.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(bins)
}

/// Decile curve, Gini ratio and payment misallocation of a proxy.
pub fn decile_calibration(proxy: &[f64], utilities: &[f64]) -> Result<CalibrationReport> {
    if proxy.len() != utilities.len() {
        return Err(Error::InvalidArgument("proxy and utilities differ in length".into()));
    }
    let abs: Vec<f64> = utilities.iter().map(|u| u.abs()).collect();
    let bins = decile_bins(proxy)?;
    let decile_means = bins
        .iter()
        .map(|b| b.iter().map(|&g| abs[g]).sum::<f64>() / b.len() as f64)
        .collect();
    let g_true = gini(&abs)?;
    if g_true == 0.0 {
        return Err(Error::Degenerate("utilities are uniform; Gini ratio undefined".into()));
    }
    let g_proxy = if proxy.iter().all(|&p| p == proxy[0]) {
        0.0
    } else {
        gini(proxy)?
    };
    let p_true = shares(&abs)?;
    let p_proxy = shares(proxy)?;
    let over = overpayment(&p_proxy, &p_true)?;
    let share_spearman = spearman(&p_proxy, &p_true).ok().map(|r| r.rho);
    Ok(CalibrationReport {
        decile_means,
        bins,
        gini_ratio: g_proxy / g_true,
        overpayment: over.total,
        pairs: p_proxy.into_iter().zip(p_true).collect(),
        share_spearman,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub shares: Vec<BootstrapCI>,
    /// Top-`k` stations by point share.
    pub top: Vec<usize>,
    /// Mean of `(upper - lower) / point` over the top stations.
    pub ci_to_share: f64,
}

pub const MIN_STABILITY_TIMESTAMPS: usize = 10;

/// Bootstrap over timestamps of the time-averaged payment shares.
pub fn payment_stability(
    per_timestamp: &[Vec<f64>],
    n_resamples: usize,
    level: f64,
    top_k: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let t = per_timestamp.len();
    if t < MIN_STABILITY_TIMESTAMPS {
        return Err(Error::TooFewSamples {
            needed: MIN_STABILITY_TIMESTAMPS,
            got: t,
        });
    }
    if n_resamples < MIN_RESAMPLES || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("invalid resample count or level".into()));
    }
    let n = per_timestamp[0].len();
    if per_timestamp.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidArgument("timestamps differ in station count".into()));
    }
    if top_k == 0 || top_k > n {
        return Err(Error::InvalidArgument(format!("top_k = {top_k} must be in [1, {n}]")));
    }
    let mean_shares = |idx: &mut dyn Iterator<Item = usize>| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; n];
        for k in idx {
            for (a, s) in acc.iter_mut().zip(&per_timestamp[k]) {
                *a += s;
            }
        }
        shares(&acc)
    };
    let point = mean_shares(&mut (0..t))?;
    let draws: Vec<Vec<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, tag::BOOTSTRAP, r as u64);
            let idx: Vec<usize> = (0..t).map(|_| g.random_range(0..t)).collect();
            mean_shares(&mut idx.into_iter())
        })
        .collect::<Result<_>>()?;
    let alpha = 1.0 - level;
    let cis: Vec<BootstrapCI> = (0..n)
        .map(|g| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[g]).collect();
            col.sort_by(f64::total_cmp);
            BootstrapCI {
                point: point[g],
                lower: percentile(&col, alpha / 2.0),
                upper: percentile(&col, 1.0 - alpha / 2.0),
                level,
                resamples: n_resamples,
                scheme: Scheme::Iid,
            }
        })
        .collect();
    let top = top_k_indices(&point, top_k);
    let ci_to_share = top
        .iter()
        .map(|&g| {
            if cis[g].point > 0.0 {
                cis[g].width() / cis[g].point
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / top.len() as f64;
    Ok(StabilityReport {
        shares: cis,
        top,
        ci_to_share,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageObjective {
    Mse,
    /// Captured utility of the top-`k` stations.
    CapturedUtility(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageFit {
    pub objective: ShrinkageObjective,
    /// Mean of the per-fold values.
    pub lambda: f64,
    pub lambda_std: f64,
    pub fold_lambdas: Vec<f64>,
    /// Per held-out timestamp: rho(blend, u_t) - rho(proxy, u_t).
    pub fold_delta_rho: Vec<Option<f64>>,
    pub delta_rho: f64,
}

pub fn lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.05).collect()
}

fn blend(lambda: f64, proxy: &[f64], prior: &[f64]) -> Vec<f64> {
    proxy
        .iter()
        .zip(prior)
        .map(|(p, d)| lambda * p + (1.0 - lambda) * d)
        .collect()
}

fn mean_rows(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Leave-one-timestamp-out fit of `lambda * proxy + (1 - lambda) * prior`.
///
/// For each held-out timestamp the weight is chosen on the remaining
/// timestamps (mean proxy shares against mean utility shares). The held-out
/// timestamp then scores the blend against the pure proxy by Spearman rho.
/// Ties in the inner objective go to the larger weight.
pub fn shrinkage_fit(
    proxy_shares: &[Vec<f64>],
    prior_shares: &[f64],
    true_shares: &[Vec<f64>],
    objective: ShrinkageObjective,
) -> Result<ShrinkageFit> {
    let t = proxy_shares.len();
    if t < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: t });
    }
    if true_shares.len() != t {
        return Err(Error::InvalidArgument(
            "proxy and truth differ in timestamp count".into(),
        ));
    }
    let n = prior_shares.len();
    if proxy_shares.iter().chain(true_shares).any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("station counts differ".into()));
    }
    if let ShrinkageObjective::CapturedUtility(k) = objective {
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("k = {k} must be in [1, {n}]")));
        }
    }
    let grid = lambda_grid();
    let mut fold_lambdas = Vec::with_capacity(t);
    let mut fold_delta_rho = Vec::with_capacity(t);
    for held in 0..t {
        let proxy_in: Vec<&Vec<f64>> = (0..t).filter(|&s| s != held).map(|s| &proxy_shares[s]).collect();
        let truth_in: Vec<&Vec<f64>> = (0..t).filter(|&s| s != held).map(|s| &true_shares[s]).collect();
        let proxy_h = mean_rows(&proxy_in);
        let truth_h = mean_rows(&truth_in);
        let mut best = (f64::INFINITY, 0.0);
        for &lambda in &grid {
            let b = blend(lambda, &proxy_h, prior_shares);
            let loss = match objective {
                ShrinkageObjective::Mse => b.iter().zip(&truth_h).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64,
                ShrinkageObjective::CapturedUtility(k) => {
                    let sel = select(Some(&b), n, k, 0)?;
                    -captured_utility(&sel, &truth_h)?
                }
            };
            if loss <= best.0 {
                best = (loss, lambda);
            }
        }
        let lambda = best.1;
        fold_lambdas.push(lambda);
        let blended = blend(lambda, &proxy_h, prior_shares);
        let u = &true_shares[held];
        fold_delta_rho.push(match (spearman(&blended, u), spearman(&proxy_h, u)) {
            (Ok(a), Ok(b)) => Some(a.rho - b.rho),
            _ => None,
        });
    }
    let lambda = fold_lambdas.iter().sum::<f64>() / t as f64;
    let lambda_std = (fold_lambdas.iter().map(|l| (l - lambda).powi(2)).sum::<f64>() / t as f64).sqrt();
    let defined: Vec<f64> = fold_delta_rho.iter().flatten().copied().collect();
    let delta_rho = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(ShrinkageFit {
        objective,
        lambda,
        lambda_std,
        fold_lambdas,
        fold_delta_rho,
        delta_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_station_grid, GridConfig};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn full_set_captures_everything() {
        let u = [0.3, -1.0, 2.0, 0.0, 0.7];
        for s in Strategy::ALL {
            let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
            let r = evaluate_selection(s, Some(&scores), &u, 5, 1).unwrap();
            assert!((r.captured - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_is_optimal() {
        let u = [0.3, -1.0, 2.0, 0.0, 0.7];
        let r = evaluate_selection(Strategy::Oracle, None, &u, 2, 0).unwrap();
        assert_eq!(r.selected, vec![1, 2]);
        assert_eq!(r.optimality, 1.0);
    }

    #[test]
    fn captured_edge_cases() {
        let u = [1.0, 2.0, 3.0];
        assert_eq!(captured_utility(&[], &u).unwrap(), 0.0);
        assert_eq!(captured_utility(&[0, 1, 2], &u).unwrap(), 1.0);
        assert!(captured_utility(&[0], &[0.0, 0.0]).is_err());
        assert!(select(None, 3, 4, 0).is_err());
    }

    #[test]
    fn distance_self_cell_ranks_first() {
        let g = make_grid(&GridConfig::default()).unwrap();
        let st = make_station_grid(&g, 4).unwrap();
        let t = TargetSpec::new(&g, "x", g.cell_latlon(12, 16), "t2m").unwrap();
        let d = distance_scores(&st, &t);
        let own = st
            .stations()
            .iter()
            .position(|s| s.lat_idx == 12 && s.lon_idx == 16)
            .unwrap();
        assert_eq!(top_k_indices(&d, 1), vec![own]);
        assert!(d.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn payment_examples() {
        let p = payment(&[1.0, 1.0], DEFAULT_BUDGET, "x").unwrap();
        assert_eq!(p.amounts, vec![5000.0, 5000.0]);
        let q = payment(&[0.0, 3.0, 0.0], DEFAULT_BUDGET, "x").unwrap();
        assert_eq!(q.amounts, vec![0.0, DEFAULT_BUDGET, 0.0]);
        assert!(payment(&[0.0, 0.0], DEFAULT_BUDGET, "x").is_err());
    }

    #[test]
    fn overpayment_algebra() {
        let t = [0.5, 0.0, 0.5];
        assert_eq!(overpayment(&t, &t).unwrap().total, 0.0);
        let o = overpayment(&[0.0, 1.0, 0.0], &t).unwrap();
        assert_eq!(o.total, 1.0);
        let o = overpayment(&[0.0, 0.0, 1.0], &t).unwrap();
        assert_eq!(o.total, 1.0 - t[2]);
        assert!(overpayment(&[0.5, 0.6, 0.0], &t).is_err());
    }

    #[test]
    fn self_calibration() {
        let u: Vec<f64> = (0..37).map(|i| ((i * 13) % 11) as f64 + 0.5).collect();
        let r = decile_calibration(&u, &u).unwrap();
        assert_eq!(r.overpayment, 0.0);
        assert!((r.gini_ratio - 1.0).abs() <= 1e-9);
        assert!(r.decile_means.windows(2).all(|w| w[0] <= w[1]));
        let flat = decile_calibration(&vec![2.0; 37], &u).unwrap();
        assert_eq!(flat.gini_ratio, 0.0);
    }

    #[test]
    fn deciles_partition_with_low_remainders() {
        let p: Vec<f64> = (0..23).map(|i| (i * 7 % 23) as f64).collect();
        let b = decile_bins(&p).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(decile_bins(&p[..9]).is_err());
    }

    #[test]
    fn stability_of_constant_scores() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0]; 12];
        let r = payment_stability(&rows, 1000, 0.95, 2, 4).unwrap();
        assert_eq!(r.ci_to_share, 0.0);
        assert!(r.shares.iter().all(|c| c.width() == 0.0));
        assert!(payment_stability(&rows[..9], 1000, 0.95, 2, 4).is_err());
    }

    fn planted(seed: u64, t: usize, n: usize, mix: f64, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
        let mut r = rng::stream(seed, tag::SIMULATION, 0);
        let prior = shares(&(0..n).map(|_| r.random_range(0.1..1.0)).collect::<Vec<_>>()).unwrap();
        let nz = Normal::new(0.0, noise).unwrap();
        let mut proxy = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..t {
            let p = shares(&(0..n).map(|_| r.random_range(0.1..1.0)).collect::<Vec<_>>()).unwrap();
            let u: Vec<f64> = p
                .iter()
                .zip(&prior)
                .map(|(a, b)| (mix * a + (1.0 - mix) * b + nz.sample(&mut r)).max(0.0))
                .collect();
            truth.push(u);
            proxy.push(p);
        }
        (proxy, prior, truth)
    }

    #[test]
    fn shrinkage_recovers_extremes() {
        let (proxy, prior, _) = planted(1, 8, 30, 0.5, 0.0);
        let truth_prior = vec![prior.clone(); 8];
        let f = shrinkage_fit(&proxy, &prior, &truth_prior, ShrinkageObjective::Mse).unwrap();
        assert_eq!(f.lambda, 0.0);
        let f = shrinkage_fit(&proxy, &prior, &proxy, ShrinkageObjective::Mse).unwrap();
        assert_eq!(f.lambda, 1.0);
        assert!(shrinkage_fit(&proxy[..2], &prior, &proxy[..2], ShrinkageObjective::Mse).is_err());
    }

    #[test]
    fn shrinkage_recovers_planted_mixture() {
        for seed in 0..20 {
            let (proxy, prior, truth) = planted(seed, 20, 40, 0.5, 0.002);
            let f = shrinkage_fit(&proxy, &prior, &truth, ShrinkageObjective::Mse).unwrap();
            assert!((0.3..=0.7).contains(&f.lambda), "seed {seed}: {}", f.lambda);
        }
    }

    proptest! {
        #[test]
        fn additive_over_disjoint_sets(u in prop::collection::vec(0.01f64..10.0, 4..60), split in 1usize..3) {
            let s: Vec<usize> = (0..u.len()).filter(|g| g % (split + 1) == 0).collect();
            let t: Vec<usize> = (0..u.len()).filter(|g| g % (split + 1) == 1).collect();
            let st: Vec<usize> = s.iter().chain(&t).copied().collect();
            let lhs = captured_utility(&st, &u).unwrap();
            let rhs = captured_utility(&s, &u).unwrap() + captured_utility(&t, &u).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn scaling_scores_changes_nothing(
            s in prop::collection::vec(0.0f64..5.0, 10..40),
            c in 0.001f64..1000.0,
            k in 1usize..10,
        ) {
            prop_assume!(s.iter().sum::<f64>() > 0.0);
            let u: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + (i % 3) as f64 + 0.1).collect();
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            prop_assert_eq!(select(Some(&s), s.len(), k, 0).unwrap(), select(Some(&scaled), s.len(), k, 0).unwrap());
            let a = decile_calibration(&s, &u).unwrap();
            let b = decile_calibration(&scaled, &u).unwrap();
            prop_assert_eq!(&a.bins, &b.bins);
            prop_assert!((a.overpayment - b.overpayment).abs() < 1e-12);
            prop_assert!((a.gini_ratio - b.gini_ratio).abs() < 1e-12);
            let pa = payment(&s, DEFAULT_BUDGET, "a").unwrap();
            let pb = payment(&scaled, DEFAULT_BUDGET, "b").unwrap();
            prop_assert!(pa.is_valid() && pb.is_valid());
            for (x, y) in pa.shares.iter().zip(&pb.shares) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn overpayment_equals_underpayment(a in prop::collection::vec(0.0f64..1.0, 2..50), seed in 0u64..100) {
            prop_assume!(a.iter().sum::<f64>() > 0.0);
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| (v * (i as f64 + seed as f64)).sin().abs() + 0.01).collect();
            let o = overpayment(&shares(&a).unwrap(), &shares(&b).unwrap()).unwrap();
            prop_assert!((o.total - o.underpayment).abs() < 1e-12);
        }
    }
}
