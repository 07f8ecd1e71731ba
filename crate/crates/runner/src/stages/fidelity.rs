//! Attribution against ablation: global (per-variable) and spatial
//! (per-station) rank agreement.

use anyhow::Result;
use gradval_core::metrics::bh_fdr;
use gradval_core::rng;

use super::{abs_rows, fidelity, finite_mean, CiKind, Fidelity};
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

const GLOBAL_HEADER: &[&str] = &[
    "configuration",
    "model",
    "target",
    "variable",
    "method",
    "n_timestamps",
    "rho",
    "rho_p",
    "topk_overlap",
    "mean_rho_t",
    "ci_lower",
    "ci_upper",
    "wilcoxon_p",
    "bh_significant",
    "error",
];

const SPATIAL_HEADER: &[&str] = &[
    "configuration",
    "model",
    "target",
    "variable",
    "mode",
    "patch",
    "magnitude",
    "method",
    "n_timestamps",
    "rho",
    "rho_p",
    "topk_overlap",
    "mean_rho_t",
    "ci_lower",
    "ci_upper",
    "wilcoxon_p",
    "bh_significant",
    "clipped_stations",
    "error",
];

fn stat_cells(f: &Result<Fidelity>) -> Vec<String> {
    match f {
        Ok(f) => vec![
            f.rho_t.len().to_string(),
            opt(f.rho),
            opt(f.rho_p),
            num(f.topk_overlap),
            opt(f.mean_rho_t()),
            opt(f.ci.map(|c| c.lower)),
            opt(f.ci.map(|c| c.upper)),
            opt(f.wilcoxon_p),
        ],
        Err(_) => vec![String::new(); 8],
    }
}

fn bh_flags(results: &[Result<Fidelity>], q: f64) -> Result<Vec<bool>> {
    let p: Vec<f64> = results
        .iter()
        .map(|r| r.as_ref().ok().and_then(|f| f.wilcoxon_p).unwrap_or(1.0))
        .collect();
    if p.is_empty() {
        return Ok(Vec::new());
    }
    Ok(bh_fdr(&p, q)?)
}

fn error_cell<T>(r: &Result<T>) -> String {
    r.as_ref().err().map(|e| format!("{e:#}")).unwrap_or_default()
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let cfg = &ctx.config;
    let resamples = ctx.config.resamples();
    let level = cfg.statistics.level;
    let blocks = ctx.stations.neighbourhood_blocks(cfg.statistics.block_size);
    let method = format!("IG-K{}", ctx.steps());

    let global: Vec<Result<Fidelity>> = (0..ctx.configurations.len())
        .map(|c| {
            let ig = ctx.ig(c)?;
            let u = abs_rows(&ctx.global(c)?);
            fidelity(
                &ig.variable,
                &u,
                cfg.statistics.topk_global,
                CiKind::Timestamps,
                resamples,
                level,
                rng::mix(&[cfg.seed, 101, c as u64]),
            )
        })
        .collect();
    let global_bh = bh_flags(&global, cfg.statistics.fdr_q)?;
    let mut gt = Table::new("fidelity_global", GLOBAL_HEADER);
    for (c, r) in global.iter().enumerate() {
        let conf = &ctx.configurations[c];
        let mut row = vec![
            conf.label.clone(),
            conf.model_label(),
            conf.target.name.clone(),
            conf.target.variable_name.clone(),
            method.clone(),
        ];
        row.extend(stat_cells(r));
        row.push(flag(global_bh[c]));
        row.push(error_cell(r));
        gt.push(row);
    }

    let mut keys = Vec::new();
    let mut spatial = Vec::new();
    for c in 0..ctx.configurations.len() {
        for s in 0..ctx.specs.len() {
            keys.push((c, s));
            spatial.push((|| {
                let ig = ctx.ig(c)?;
                let maps = ctx.spatial(c, s)?;
                let u: Vec<Vec<f64>> = maps.iter().map(|m| m.abs.clone()).collect();
                fidelity(
                    &ig.spatial,
                    &u,
                    cfg.statistics.topk_spatial,
                    CiKind::Blocks(&blocks),
                    resamples,
                    level,
                    rng::mix(&[cfg.seed, 102, c as u64, s as u64]),
                )
            })());
        }
    }
    let spatial_bh = bh_flags(&spatial, cfg.statistics.fdr_q)?;
    let full_cells = |p: usize| p * p;
    let mut st = Table::new("fidelity_spatial", SPATIAL_HEADER);
    for (k, ((c, s), r)) in keys.iter().zip(&spatial).enumerate() {
        let conf = &ctx.configurations[*c];
        let spec = &ctx.specs[*s];
        let clipped = ctx
            .spatial(*c, *s)
            .ok()
            .and_then(|m| {
                m.first()
                    .map(|m| m.cells.iter().filter(|&&n| n < full_cells(spec.patch)).count())
            })
            .map(|n| n.to_string())
            .unwrap_or_default();
        let mut row = vec![
            conf.label.clone(),
            conf.model_label(),
            conf.target.name.clone(),
            conf.target.variable_name.clone(),
            spec.mode.name().to_string(),
            spec.patch.to_string(),
            num(spec.magnitude),
            method.clone(),
        ];
        row.extend(stat_cells(r));
        row.push(flag(spatial_bh[k]));
        row.push(clipped);
        row.push(error_cell(r));
        st.push(row);
    }

    let mut summary = Table::new(
        "fidelity_summary",
        &[
            "scope",
            "model",
            "mode",
            "patch",
            "n_configurations",
            "mean_rho",
            "mean_topk_overlap",
            "frac_significant",
        ],
    );
    let mut models: Vec<String> = ctx.configurations.iter().map(|c| c.model_label()).collect();
    models.dedup();
    for m in &models {
        let idx: Vec<usize> = (0..ctx.configurations.len())
            .filter(|&c| &ctx.configurations[c].model_label() == m)
            .collect();
        summary.push(summary_row(
            "global",
            m,
            "-",
            "-",
            idx.iter().map(|&c| (&global[c], global_bh[c])),
        ));
        for (s, spec) in ctx.specs.iter().enumerate() {
            let rows = keys
                .iter()
                .enumerate()
                .filter(|(_, (c, ss))| *ss == s && idx.contains(c))
                .map(|(k, _)| (&spatial[k], spatial_bh[k]));
            summary.push(summary_row(
                "spatial",
                m,
                spec.mode.name(),
                &spec.patch.to_string(),
                rows,
            ));
        }
    }
    Ok(vec![gt, st, summary])
}

fn summary_row<'a>(
    scope: &str,
    model: &str,
    mode: &str,
    patch: &str,
    rows: impl Iterator<Item = (&'a Result<Fidelity>, bool)>,
) -> Vec<String> {
    let rows: Vec<(&Fidelity, bool)> = rows.filter_map(|(r, b)| r.as_ref().ok().map(|f| (f, b))).collect();
    let n = rows.len();
    vec![
        scope.to_string(),
        model.to_string(),
        mode.to_string(),
        patch.to_string(),
        n.to_string(),
        opt(finite_mean(rows.iter().filter_map(|(f, _)| f.rho))),
        opt(finite_mean(rows.iter().map(|(f, _)| f.topk_overlap))),
        opt((n > 0).then(|| rows.iter().filter(|(_, b)| *b).count() as f64 / n as f64)),
    ]
}
