//! Leave-one-timestamp-out blend of the IG proxy with a distance prior.

use anyhow::Result;
use gradval_core::incentive::{distance_scores, shares, shrinkage_fit, ShrinkageFit, ShrinkageObjective};
use gradval_core::metrics::wilcoxon_signed_rank;

use super::finite_mean;
use crate::context::Context;
use crate::table::{num, opt, Table};

const CAPTURE_K: usize = 10;

fn objective_name(o: ShrinkageObjective) -> String {
    match o {
        ShrinkageObjective::Mse => "mse".into(),
        ShrinkageObjective::CapturedUtility(k) => format!("captured_k{k}"),
    }
}

fn fit(ctx: &Context, c: usize, s: usize, objective: ShrinkageObjective) -> Result<ShrinkageFit> {
    let ig = ctx.ig(c)?;
    let maps = ctx.spatial(c, s)?;
    let proxy = ig
        .spatial
        .iter()
        .map(|r| shares(r))
        .collect::<gradval_core::Result<Vec<_>>>()?;
    let truth = ig
        .timestamps
        .iter()
        .map(|&t| shares(&maps[t].abs))
        .collect::<gradval_core::Result<Vec<_>>>()?;
    let prior = shares(&distance_scores(&ctx.stations, &ctx.configurations[c].target))?;
    Ok(shrinkage_fit(&proxy, &prior, &truth, objective)?)
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let s = ctx.reference_spec_index()?;
    let objectives = [
        ShrinkageObjective::Mse,
        ShrinkageObjective::CapturedUtility(CAPTURE_K.min(ctx.stations.len())),
    ];
    let mut folds = Table::new(
        "shrinkage",
        &["configuration", "objective", "fold", "lambda", "delta_rho"],
    );
    let mut summary = Table::new(
        "shrinkage_summary",
        &[
            "configuration",
            "model",
            "objective",
            "lambda",
            "lambda_std",
            "delta_rho",
            "wilcoxon_p",
            "error",
        ],
    );
    let mut agg: Vec<((String, String), Vec<f64>, Vec<f64>)> = Vec::new();
    for (c, conf) in ctx.desk_configurations() {
        for objective in objectives {
            let name = objective_name(objective);
            match fit(ctx, c, s, objective) {
                Ok(f) => {
                    for (k, (l, d)) in f.fold_lambdas.iter().zip(&f.fold_delta_rho).enumerate() {
                        folds.push(vec![conf.label.clone(), name.clone(), k.to_string(), num(*l), opt(*d)]);
                    }
                    let deltas: Vec<f64> = f.fold_delta_rho.iter().flatten().copied().collect();
                    let p = wilcoxon_signed_rank(&deltas).ok().map(|w| w.p_value);
                    summary.push(vec![
                        conf.label.clone(),
                        conf.model_label(),
                        name.clone(),
                        num(f.lambda),
                        num(f.lambda_std),
                        num(f.delta_rho),
                        opt(p),
                        String::new(),
                    ]);
                    let key = (conf.model_label(), name);
                    match agg.iter_mut().find(|(k, _, _)| *k == key) {
                        Some((_, l, d)) => {
                            l.push(f.lambda);
                            d.push(f.delta_rho);
                        }
                        None => agg.push((key, vec![f.lambda], vec![f.delta_rho])),
                    }
                }
                Err(e) => {
                    let mut row = vec![conf.label.clone(), conf.model_label(), name];
                    row.extend(vec![String::new(); 4]);
                    row.push(format!("{e:#}"));
                    summary.push(row);
                }
            }
        }
    }
    for ((model, name), l, d) in agg {
        summary.push(vec![
            "all".into(),
            model,
            name,
            opt(finite_mean(l)),
            String::new(),
            opt(finite_mean(d)),
            String::new(),
            String::new(),
        ]);
    }
    Ok(vec![folds, summary])
}
