//! Sensor selection by strategy and budget, scored by captured utility.

use anyhow::Result;
use gradval_core::attribution::{time_average, Method};
use gradval_core::incentive::{distance_scores, evaluate_selection, Strategy};
use gradval_core::rng;

use super::finite_mean;
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

/// Time-averaged per-station scores of a strategy under spec `s`; `None`
/// for the uniform strategy.
pub fn strategy_scores(ctx: &Context, c: usize, s: usize, strategy: Strategy) -> Result<Option<Vec<f64>>> {
    let method = |m: Method| -> Result<Option<Vec<f64>>> { Ok(Some(time_average(&ctx.method(c, m)?.spatial)?)) };
    match strategy {
        Strategy::Ig => method(Method::Ig),
        Strategy::Gti => method(Method::Gti),
        Strategy::Vg => method(Method::Vg),
        Strategy::Distance => Ok(Some(distance_scores(&ctx.stations, &ctx.configurations[c].target))),
        Strategy::Oracle => Ok(Some(mean_abs_utility(ctx, c, s)?)),
        Strategy::Uniform => Ok(None),
    }
}

/// Time-averaged `|U_g|`.
pub fn mean_abs_utility(ctx: &Context, c: usize, s: usize) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = ctx.spatial(c, s)?.iter().map(|m| m.abs.clone()).collect();
    Ok(time_average(&rows)?)
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let (budgets, _) = ctx.config.budgets(ctx.stations.len());
    let draws = ctx.config.selection.uniform_draws;
    let mut t = Table::new(
        "selection",
        &[
            "configuration",
            "model",
            "mode",
            "patch",
            "strategy",
            "k",
            "captured",
            "efficiency",
            "optimality",
            "oracle_dominates",
        ],
    );
    // (strategy, k) -> per-configuration (captured, efficiency, optimality, dominated)
    let mut agg: Vec<((Strategy, usize), Vec<(f64, f64, f64, bool)>)> = Vec::new();
    for (c, conf) in ctx.desk_configurations() {
        for (s, spec) in ctx.specs.iter().enumerate() {
            let u = mean_abs_utility(ctx, c, s)?;
            for strategy in Strategy::ALL {
                let scores = strategy_scores(ctx, c, s, strategy)?;
                for &k in &budgets {
                    let (captured, efficiency, optimality) = if strategy == Strategy::Uniform {
                        let runs = (0..draws)
                            .map(|r| {
                                let seed = rng::mix(&[ctx.config.seed, c as u64, s as u64, k as u64, r as u64]);
                                evaluate_selection(strategy, None, &u, k, seed)
                            })
                            .collect::<gradval_core::Result<Vec<_>>>()?;
                        let n = runs.len() as f64;
                        (
                            runs.iter().map(|r| r.captured).sum::<f64>() / n,
                            runs.iter().map(|r| r.efficiency).sum::<f64>() / n,
                            runs.iter().map(|r| r.optimality).sum::<f64>() / n,
                        )
                    } else {
                        let r = evaluate_selection(strategy, scores.as_deref(), &u, k, 0)?;
                        (r.captured, r.efficiency, r.optimality)
                    };
                    let dominated = optimality <= 1.0 + 1e-12;
                    t.push(vec![
                        conf.label.clone(),
                        conf.model_label(),
                        spec.mode.name().to_string(),
                        spec.patch.to_string(),
                        strategy.name().to_string(),
                        k.to_string(),
                        num(captured),
                        num(efficiency),
                        num(optimality),
                        flag(dominated),
                    ]);
                    match agg.iter_mut().find(|(key, _)| *key == (strategy, k)) {
                        Some((_, v)) => v.push((captured, efficiency, optimality, dominated)),
                        None => agg.push(((strategy, k), vec![(captured, efficiency, optimality, dominated)])),
                    }
                }
            }
        }
    }
    let mut summary = Table::new(
        "selection_summary",
        &[
            "strategy",
            "k",
            "n_configurations",
            "mean_captured",
            "mean_efficiency",
            "mean_optimality",
            "oracle_dominance_rate",
        ],
    );
    for ((strategy, k), v) in &agg {
        let n = v.len();
        summary.push(vec![
            strategy.name().to_string(),
            k.to_string(),
            n.to_string(),
            opt(finite_mean(v.iter().map(|x| x.0))),
            opt(finite_mean(v.iter().map(|x| x.1))),
            opt(finite_mean(v.iter().map(|x| x.2))),
            num(v.iter().filter(|x| x.3).count() as f64 / n as f64),
        ]);
    }
    Ok(vec![t, summary])
}
