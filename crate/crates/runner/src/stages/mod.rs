//! Experiment stages. Each stage reads the shared [`Context`] and returns
//! result tables; writing and bookkeeping happen in the caller.

use anyhow::Result;
use gradval_core::attribution::time_average;
use gradval_core::metrics::bootstrap::mean;
use gradval_core::metrics::{
    bootstrap_block_spatial, bootstrap_iid, spearman, topk_overlap, wilcoxon_signed_rank, BootstrapCI,
};
use serde::{Deserialize, Serialize};

use crate::context::Context;
use crate::table::Table;

pub mod calibrate;
pub mod converge;
pub mod detect;
pub mod fidelity;
pub mod game;
pub mod methods;
pub mod pay;
pub mod select;
pub mod shrinkage;
pub mod stability;
pub mod subadditivity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fidelity,
    Methods,
    Calibrate,
    Select,
    Pay,
    Stability,
    Shrinkage,
    Subadditivity,
    Game,
    Detect,
    Converge,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Fidelity,
        Stage::Methods,
        Stage::Calibrate,
        Stage::Select,
        Stage::Pay,
        Stage::Stability,
        Stage::Shrinkage,
        Stage::Subadditivity,
        Stage::Game,
        Stage::Detect,
        Stage::Converge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fidelity => "fidelity",
            Stage::Methods => "methods",
            Stage::Calibrate => "calibrate",
            Stage::Select => "select",
            Stage::Pay => "pay",
            Stage::Stability => "stability",
            Stage::Shrinkage => "shrinkage",
            Stage::Subadditivity => "subadditivity",
            Stage::Game => "game",
            Stage::Detect => "detect",
            Stage::Converge => "converge",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn run(self, ctx: &Context) -> Result<Vec<Table>> {
        match self {
            Stage::Fidelity => fidelity::run(ctx),
            Stage::Methods => methods::run(ctx),
            Stage::Calibrate => calibrate::run(ctx),
            Stage::Select => select::run(ctx),
            Stage::Pay => pay::run(ctx),
            Stage::Stability => stability::run(ctx),
            Stage::Shrinkage => shrinkage::run(ctx),
            Stage::Subadditivity => subadditivity::run(ctx),
            Stage::Game => game::run(ctx),
            Stage::Detect => detect::run(ctx),
            Stage::Converge => converge::run(ctx),
        }
    }
}

/// How the fidelity interval is resampled.
pub enum CiKind<'a> {
    /// Per-timestamp correlations, iid over timestamps.
    Timestamps,
    /// Stations in spatial blocks, for the time-averaged correlation.
    Blocks(&'a [Vec<usize>]),
}

/// Agreement between a proxy series and a utility series.
#[derive(Debug, Clone, PartialEq)]
pub struct Fidelity {
    pub rho: Option<f64>,
    pub rho_p: Option<f64>,
    pub topk_overlap: f64,
    /// Per-timestamp correlations, undefined timestamps dropped.
    pub rho_t: Vec<f64>,
    pub wilcoxon_p: Option<f64>,
    pub ci: Option<BootstrapCI>,
}

impl Fidelity {
    pub fn mean_rho_t(&self) -> Option<f64> {
        (!self.rho_t.is_empty()).then(|| mean(&self.rho_t))
    }
}

/// Time-averaged and per-timestamp Spearman agreement of `proxy` with
/// `utility` (both already unsigned), with a bootstrap interval and a
/// one-sided Wilcoxon test on the per-timestamp values.
pub fn fidelity(
    proxy: &[Vec<f64>],
    utility: &[Vec<f64>],
    k: usize,
    ci: CiKind<'_>,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Fidelity> {
    anyhow::ensure!(
        proxy.len() == utility.len(),
        "proxy and utility differ in timestamp count"
    );
    let a = time_average(proxy)?;
    let u = time_average(utility)?;
    let agg = spearman(&a, &u).ok();
    let overlap = topk_overlap(&a, &u, k.min(a.len()))?;
    let rho_t: Vec<f64> = proxy
        .iter()
        .zip(utility)
        .filter_map(|(p, q)| spearman(p, q).ok().map(|r| r.rho))
        .collect();
    let wilcoxon_p = wilcoxon_signed_rank(&rho_t).ok().map(|w| w.p_value);
    let ci = match ci {
        CiKind::Timestamps => bootstrap_iid(&rho_t, mean, resamples, level, seed).ok(),
        CiKind::Blocks(blocks) => {
            let idx: Vec<f64> = (0..a.len()).map(|i| i as f64).collect();
            let stat = |sample: &[f64]| {
                let pa: Vec<f64> = sample.iter().map(|&i| a[i as usize]).collect();
                let pu: Vec<f64> = sample.iter().map(|&i| u[i as usize]).collect();
                spearman(&pa, &pu).map(|r| r.rho).unwrap_or(f64::NAN)
            };
            bootstrap_block_spatial(&idx, blocks, stat, resamples, level, seed).ok()
        }
    }
    .filter(|c| c.lower.is_finite() && c.upper.is_finite());
    Ok(Fidelity {
        rho: agg.map(|r| r.rho),
        rho_p: agg.map(|r| r.p_value),
        topk_overlap: overlap,
        rho_t,
        wilcoxon_p,
        ci,
    })
}

pub fn abs_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect()
}

/// Unweighted mean of the finite entries, `None` when there are none.
pub fn finite_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| mean(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_series_have_perfect_fidelity() {
        let p: Vec<Vec<f64>> = (0..8)
            .map(|t| (0..12).map(|g| (g * (t + 1)) as f64).collect())
            .collect();
        let f = fidelity(&p, &p, 3, CiKind::Timestamps, 1000, 0.95, 1).unwrap();
        assert_eq!(f.rho, Some(1.0));
        assert_eq!(f.topk_overlap, 1.0);
        assert_eq!(f.rho_t, vec![1.0; 8]);
        let ci = f.ci.unwrap();
        assert_eq!((ci.lower, ci.upper), (1.0, 1.0));
        assert!(f.wilcoxon_p.unwrap() < 0.01);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_name(s.name()), Some(s));
        }
    }
}
