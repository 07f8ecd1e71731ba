//! Bootstrap uncertainty of IG payment shares over timestamps.

use anyhow::Result;
use gradval_core::incentive::payment_stability;
use gradval_core::rng;

use super::finite_mean;
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let cfg = &ctx.config;
    let top_k = cfg.payment.stability_top_k.min(ctx.stations.len());
    let mut shares = Table::new(
        "stability",
        &["configuration", "station", "share", "ci_lower", "ci_upper", "top"],
    );
    let mut summary = Table::new(
        "stability_summary",
        &["configuration", "model", "top_k", "ci_to_share", "error"],
    );
    let mut by_model: Vec<(String, Vec<f64>)> = Vec::new();
    for (c, conf) in ctx.desk_configurations() {
        let ig = ctx.ig(c)?;
        let seed = rng::mix(&[cfg.seed, 201, c as u64]);
        match payment_stability(&ig.spatial, ctx.config.resamples(), cfg.statistics.level, top_k, seed) {
            Ok(r) => {
                for (g, ci) in r.shares.iter().enumerate() {
                    shares.push(vec![
                        conf.label.clone(),
                        g.to_string(),
                        num(ci.point),
                        num(ci.lower),
                        num(ci.upper),
                        flag(r.top.contains(&g)),
                    ]);
                }
                summary.push(vec![
                    conf.label.clone(),
                    conf.model_label(),
                    top_k.to_string(),
                    num(r.ci_to_share),
                    String::new(),
                ]);
                match by_model.iter_mut().find(|(m, _)| *m == conf.model_label()) {
                    Some((_, v)) => v.push(r.ci_to_share),
                    None => by_model.push((conf.model_label(), vec![r.ci_to_share])),
                }
            }
            Err(e) => summary.push(vec![
                conf.label.clone(),
                conf.model_label(),
                top_k.to_string(),
                String::new(),
                e.to_string(),
            ]),
        }
    }
    for (m, v) in by_model {
        summary.push(vec![
            "all".into(),
            m,
            top_k.to_string(),
            opt(finite_mean(v)),
            String::new(),
        ]);
    }
    Ok(vec![shares, summary])
}
