//! Single-timestamp recovery of the aggregated spatial fidelity and the
//! number of timestamps needed for a significant Wilcoxon test.

use anyhow::Result;
use gradval_core::attribution::time_average;
use gradval_core::metrics::{spearman, wilcoxon_signed_rank};

use super::finite_mean;
use crate::context::Context;
use crate::table::{opt, Table};

/// Shortest prefix considered for the convergence test.
pub const MIN_PREFIX: usize = 6;
pub const MIN_TIMESTAMPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// `rho(a_bar, u_bar)`.
    pub aggregate: Option<f64>,
    /// `rho(a_t, u_bar)` per timestamp.
    pub per_timestamp: Vec<Option<f64>>,
    /// Mean of the per-timestamp values over the aggregate.
    pub ratio: Option<f64>,
}

pub fn recovery(proxy: &[Vec<f64>], utility: &[Vec<f64>]) -> Result<Recovery> {
    let a = time_average(proxy)?;
    let u = time_average(utility)?;
    let aggregate = spearman(&a, &u).ok().map(|r| r.rho);
    let per_timestamp: Vec<Option<f64>> = proxy.iter().map(|p| spearman(p, &u).ok().map(|r| r.rho)).collect();
    let mean = finite_mean(per_timestamp.iter().flatten().copied());
    let ratio = match (mean, aggregate) {
        (Some(m), Some(g)) if g != 0.0 => Some(m / g),
        _ => None,
    };
    Ok(Recovery {
        aggregate,
        per_timestamp,
        ratio,
    })
}

/// One-sided Wilcoxon p-value of every prefix of length `>= MIN_PREFIX`,
/// indexed by prefix length.
pub fn prefix_p_values(rho_t: &[f64]) -> Vec<Option<f64>> {
    (0..=rho_t.len())
        .map(|n| {
            if n < MIN_PREFIX {
                None
            } else {
                wilcoxon_signed_rank(&rho_t[..n]).ok().map(|w| w.p_value)
            }
        })
        .collect()
}

/// Smallest prefix length with `p < alpha`, `None` when it never happens.
pub fn convergence_n(rho_t: &[f64], alpha: f64) -> Option<usize> {
    prefix_p_values(rho_t).iter().position(|p| p.is_some_and(|p| p < alpha))
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    anyhow::ensure!(
        ctx.fields.len() >= MIN_TIMESTAMPS,
        "convergence analysis needs at least {MIN_TIMESTAMPS} timestamps"
    );
    let alpha = ctx.config.convergence.alpha;
    let mut table = Table::new(
        "convergence",
        &[
            "configuration",
            "model",
            "variable",
            "mode",
            "patch",
            "rho_aggregate",
            "mean_rho_cycle_aggregate",
            "recovery_ratio",
            "mean_rho_cycle",
            "convergence_n",
            "full_p",
        ],
    );
    let mut curve = Table::new(
        "convergence_curve",
        &[
            "configuration",
            "mode",
            "patch",
            "timestamp",
            "rho_cycle_aggregate",
            "rho_cycle",
            "prefix_p",
        ],
    );
    for (c, conf) in ctx.desk_configurations() {
        let ig = ctx.ig(c)?;
        for (s, spec) in ctx.specs.iter().enumerate() {
            let maps = ctx.spatial(c, s)?;
            let u: Vec<Vec<f64>> = ig.timestamps.iter().map(|&t| maps[t].abs.clone()).collect();
            let rec = recovery(&ig.spatial, &u)?;
            let rho_cycle: Vec<Option<f64>> = ig
                .spatial
                .iter()
                .zip(&u)
                .map(|(a, u)| spearman(a, u).ok().map(|r| r.rho))
                .collect();
            let defined: Vec<f64> = rho_cycle.iter().flatten().copied().collect();
            let p = prefix_p_values(&defined);
            let n = convergence_n(&defined, alpha);
            table.push(vec![
                conf.label.clone(),
                conf.model_label(),
                conf.target.variable_name.clone(),
                spec.mode.name().to_string(),
                spec.patch.to_string(),
                opt(rec.aggregate),
                opt(finite_mean(rec.per_timestamp.iter().flatten().copied())),
                opt(rec.ratio),
                opt(finite_mean(defined.iter().copied())),
                n.map_or("never".to_string(), |n| n.to_string()),
                opt(p.last().copied().flatten()),
            ]);
            let mut k = 0;
            for (i, &t) in ig.timestamps.iter().enumerate() {
                if rho_cycle[i].is_some() {
                    k += 1;
                }
                curve.push(vec![
                    conf.label.clone(),
                    spec.mode.name().to_string(),
                    spec.patch.to_string(),
                    t.to_string(),
                    opt(rec.per_timestamp[i]),
                    opt(rho_cycle[i]),
                    opt(p[k]),
                ]);
            }
        }
    }
    Ok(vec![table, curve])
}
