//! IG, GTI and VG side by side: fidelity, significance, pairwise wins,
//! quadrature sensitivity, baseline choice, unit planting and cost.

use anyhow::Result;
use gradval_core::attribution::{
    gradient_times_input, integrated_gradients, spatial_importance, time_average, vanilla_gradient,
    variable_importance, AttributionConfig, AttributionMap, BaselineKind, Method,
};
use gradval_core::grid::FieldTensor;
use gradval_core::incentive::select;
use gradval_core::metrics::{bh_fdr, spearman};
use gradval_core::model::ForecastModel;
use gradval_core::rng;

use super::{abs_rows, fidelity, finite_mean, CiKind};
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

pub const METHODS: [Method; 3] = [Method::Ig, Method::Gti, Method::Vg];

fn method_label(ctx: &Context, m: Method) -> String {
    match m {
        Method::Ig => format!("IG-K{}", ctx.steps()),
        _ => m.name().to_string(),
    }
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let cfg = &ctx.config;
    let resamples = ctx.config.resamples();
    let level = cfg.statistics.level;
    let reference = ctx.reference_spec_index()?;
    let desk: Vec<usize> = ctx.desk_configurations().map(|(c, _)| c).collect();

    // (scope, method, configuration) -> (rho, wilcoxon p)
    let mut records: Vec<(&str, Method, usize, Option<f64>, Option<f64>)> = Vec::new();
    for &c in &desk {
        let u_global = abs_rows(&ctx.global(c)?);
        let u_spatial: Vec<Vec<f64>> = ctx.spatial(c, reference)?.iter().map(|m| m.abs.clone()).collect();
        for m in METHODS {
            let p = ctx.method(c, m)?;
            let seed = rng::mix(&[cfg.seed, 201, c as u64, m as u64]);
            let g = fidelity(
                &p.variable,
                &u_global,
                cfg.statistics.topk_global,
                CiKind::Timestamps,
                resamples,
                level,
                seed,
            )?;
            records.push(("global", m, c, g.rho, g.wilcoxon_p));
            let s = fidelity(
                &p.spatial,
                &u_spatial,
                cfg.statistics.topk_spatial,
                CiKind::Timestamps,
                resamples,
                level,
                seed,
            )?;
            records.push(("spatial", m, c, s.rho, s.wilcoxon_p));
        }
    }
    let p_values: Vec<f64> = records.iter().map(|r| r.4.unwrap_or(1.0)).collect();
    let significant = if p_values.is_empty() {
        Vec::new()
    } else {
        bh_fdr(&p_values, cfg.statistics.fdr_q)?
    };

    let mut per = Table::new(
        "methods",
        &[
            "configuration",
            "model",
            "scope",
            "method",
            "rho",
            "wilcoxon_p",
            "bh_significant",
        ],
    );
    for (r, sig) in records.iter().zip(&significant) {
        let conf = &ctx.configurations[r.2];
        per.push(vec![
            conf.label.clone(),
            conf.model_label(),
            r.0.to_string(),
            method_label(ctx, r.1),
            opt(r.3),
            opt(r.4),
            flag(*sig),
        ]);
    }

    let counts = evaluation_counts(ctx)?;
    let mut summary = Table::new(
        "methods_summary",
        &[
            "scope",
            "method",
            "n_configurations",
            "mean_rho",
            "n_significant",
            "gradient_evals_per_timestamp",
        ],
    );
    for scope in ["global", "spatial"] {
        for (mi, m) in METHODS.into_iter().enumerate() {
            let rows: Vec<(usize, &(&str, Method, usize, Option<f64>, Option<f64>))> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.0 == scope && r.1 == m)
                .collect();
            summary.push(vec![
                scope.to_string(),
                method_label(ctx, m),
                rows.len().to_string(),
                opt(finite_mean(rows.iter().filter_map(|(_, r)| r.3))),
                rows.iter().filter(|(k, _)| significant[*k]).count().to_string(),
                counts[mi].to_string(),
            ]);
        }
    }

    let mut pairwise = Table::new(
        "methods_pairwise",
        &["scope", "method_a", "method_b", "n_configurations", "win_rate_a"],
    );
    for scope in ["global", "spatial"] {
        for a in METHODS {
            for b in METHODS {
                if a == b {
                    continue;
                }
                let rho = |m: Method, c: usize| {
                    records
                        .iter()
                        .find(|r| r.0 == scope && r.1 == m && r.2 == c)
                        .and_then(|r| r.3)
                };
                let mut n = 0usize;
                let mut wins = 0.0;
                for &c in &desk {
                    if let (Some(ra), Some(rb)) = (rho(a, c), rho(b, c)) {
                        n += 1;
                        wins += if ra > rb {
                            1.0
                        } else if ra == rb {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
                pairwise.push(vec![
                    scope.to_string(),
                    method_label(ctx, a),
                    method_label(ctx, b),
                    n.to_string(),
                    opt((n > 0).then(|| wins / n as f64)),
                ]);
            }
        }
    }

    Ok(vec![
        per,
        summary,
        pairwise,
        k_sensitivity(ctx, &desk)?,
        baseline_sensitivity(ctx, &desk, reference)?,
        scale_invariance(ctx)?,
    ])
}

/// Gradient evaluations per timestamp for IG, GTI and VG, counted on a
/// fresh copy of the first desk model.
fn evaluation_counts(ctx: &Context) -> Result<[u64; 3]> {
    let Some((_, conf)) = ctx.desk_configurations().next() else {
        return Ok([0; 3]);
    };
    let model = ForecastModel::from_config(&ctx.grid, &conf.target, conf.model.config())?;
    let x = &ctx.fields[0];
    let clim = ctx.clim.field();
    let mut out = [0u64; 3];
    for (k, m) in METHODS.into_iter().enumerate() {
        model.reset_counts();
        match m {
            Method::Ig => drop(integrated_gradients(&model, x, clim, ctx.steps())?),
            Method::Gti => drop(gradient_times_input(&model, x, clim)?),
            Method::Vg => drop(vanilla_gradient(&model, x)?),
        }
        out[k] = model.eval_counts().gradient;
    }
    Ok(out)
}

fn k_sensitivity(ctx: &Context, desk: &[usize]) -> Result<Table> {
    let ks = &ctx.config.attribution.k_sensitivity;
    let k_ref = *ks.iter().max().unwrap_or(&ctx.steps());
    let mut t = Table::new(
        "k_sensitivity",
        &[
            "configuration",
            "model",
            "k",
            "k_ref",
            "rho_variable_ranking",
            "rho_spatial_ranking",
            "mean_rel_abs_diff",
        ],
    );
    for &c in desk {
        let conf = &ctx.configurations[c];
        let reference = ctx.proxy(c, &AttributionConfig::ig(k_ref))?;
        let ref_var = time_average(&reference.variable)?;
        let ref_sp = time_average(&reference.spatial)?;
        for &k in ks {
            let p = ctx.proxy(c, &AttributionConfig::ig(k))?;
            let diff = finite_mean(p.variable.iter().zip(&reference.variable).map(|(a, b)| {
                let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                num / b.iter().sum::<f64>()
            }));
            t.push(vec![
                conf.label.clone(),
                conf.model_label(),
                k.to_string(),
                k_ref.to_string(),
                opt(spearman(&time_average(&p.variable)?, &ref_var).ok().map(|r| r.rho)),
                opt(spearman(&time_average(&p.spatial)?, &ref_sp).ok().map(|r| r.rho)),
                opt(diff),
            ]);
        }
    }
    Ok(t)
}

fn baseline_sensitivity(ctx: &Context, desk: &[usize], reference: usize) -> Result<Table> {
    let steps = ctx.config.attribution.baseline_steps;
    let mut baselines = vec![BaselineKind::Climatology];
    baselines.extend(
        ctx.config
            .attribution
            .baselines
            .iter()
            .copied()
            .filter(|b| *b != BaselineKind::Climatology),
    );
    let mut t = Table::new(
        "baseline_sensitivity",
        &[
            "configuration",
            "model",
            "baseline",
            "steps",
            "n_timestamps",
            "rho_global",
            "rho_spatial",
            "mean_total_abs_attribution",
        ],
    );
    for &c in desk {
        let conf = &ctx.configurations[c];
        let u_global = abs_rows(&ctx.global(c)?);
        let u_spatial: Vec<Vec<f64>> = ctx.spatial(c, reference)?.iter().map(|m| m.abs.clone()).collect();
        for &b in &baselines {
            let attr = AttributionConfig::new(Method::Ig, b, steps)?;
            let p = ctx.proxy(c, &attr)?;
            let ug: Vec<Vec<f64>> = p.timestamps.iter().map(|&k| u_global[k].clone()).collect();
            let us: Vec<Vec<f64>> = p.timestamps.iter().map(|&k| u_spatial[k].clone()).collect();
            let rho = |a: &[Vec<f64>], u: &[Vec<f64>]| -> Result<Option<f64>> {
                Ok(spearman(&time_average(a)?, &time_average(u)?).ok().map(|r| r.rho))
            };
            t.push(vec![
                conf.label.clone(),
                conf.model_label(),
                b.name().to_string(),
                steps.to_string(),
                p.timestamps.len().to_string(),
                opt(rho(&p.variable, &ug)?),
                opt(rho(&p.spatial, &us)?),
                opt(finite_mean(p.variable.iter().map(|v| v.iter().sum::<f64>()))),
            ]);
        }
    }
    Ok(t)
}

fn rescale_field(x: &FieldTensor, model: &ForecastModel, v: usize, factor: f64) -> Result<FieldTensor> {
    let mut values = x.values().to_vec();
    let n = x.grid().n_cells();
    values[v * n..(v + 1) * n].iter_mut().for_each(|a| *a *= factor);
    Ok(FieldTensor::from_values(model.grid(), values, x.timestamp())?)
}

fn max_rel_diff(a: &[AttributionMap], b: &[AttributionMap]) -> f64 {
    let scale = a
        .iter()
        .flat_map(|m| m.scores().values())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.scores().values().iter().zip(y.scores().values()))
        .fold(0.0f64, |s, (p, q)| s.max((p - q).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Unit planting: one variable's units multiplied by a large factor, the
/// model re-expressed so its predictions are unchanged.
fn scale_invariance(ctx: &Context) -> Result<Table> {
    let a = &ctx.config.attribution;
    let v = ctx
        .grid
        .variable_index(&a.planted_variable)
        .ok_or_else(|| anyhow::anyhow!("unknown planted variable"))?;
    let n_t = a.planted_timestamps.min(ctx.fields.len());
    let (budgets, _) = ctx.config.budgets(ctx.stations.len());
    let mut t = Table::new(
        "scale_invariance",
        &[
            "configuration",
            "model",
            "planted_variable",
            "factor",
            "n_timestamps",
            "ig_max_rel_diff",
            "gti_max_rel_diff",
            "vg_rho_before_after",
            "vg_ranking_changed",
            "ig_selections_unchanged",
            "gti_selections_unchanged",
        ],
    );
    let mut seen = Vec::new();
    for (_, conf) in ctx.desk_configurations() {
        if seen.contains(&conf.depth) || conf.target.variable == v {
            continue;
        }
        seen.push(conf.depth);
        let planted = conf.model.with_variable_rescaled(v, a.planted_factor)?;
        let clim_p = rescale_field(ctx.clim.field(), &planted, v, a.planted_factor)?;
        let steps = ctx.steps();
        let mut ig = (Vec::new(), Vec::new());
        let mut gti = (Vec::new(), Vec::new());
        let mut vg = (Vec::new(), Vec::new());
        for x in &ctx.fields[..n_t] {
            let xp = rescale_field(x, &planted, v, a.planted_factor)?;
            ig.0.push(integrated_gradients(&conf.model, x, ctx.clim.field(), steps)?);
            ig.1.push(integrated_gradients(&planted, &xp, &clim_p, steps)?);
            gti.0.push(gradient_times_input(&conf.model, x, ctx.clim.field())?);
            gti.1.push(gradient_times_input(&planted, &xp, &clim_p)?);
            vg.0.push(vanilla_gradient(&conf.model, x)?);
            vg.1.push(vanilla_gradient(&planted, &xp)?);
        }
        let var_imp = |maps: &[AttributionMap]| time_average(&maps.iter().map(variable_importance).collect::<Vec<_>>());
        let vg_before = var_imp(&vg.0)?;
        let vg_after = var_imp(&vg.1)?;
        let order = |x: &[f64]| gradval_core::metrics::top_k_indices(x, x.len());
        let selections_equal = |pair: &(Vec<AttributionMap>, Vec<AttributionMap>)| -> Result<bool> {
            let sp = |maps: &[AttributionMap]| -> Result<Vec<f64>> {
                let rows = maps
                    .iter()
                    .map(|m| spatial_importance(m, &ctx.stations))
                    .collect::<gradval_core::Result<Vec<_>>>()?;
                Ok(time_average(&rows)?)
            };
            let (before, after) = (sp(&pair.0)?, sp(&pair.1)?);
            for &k in &budgets {
                let n = before.len();
                if select(Some(&before), n, k, 0)? != select(Some(&after), n, k, 0)? {
                    return Ok(false);
                }
            }
            Ok(true)
        };
        t.push(vec![
            conf.label.clone(),
            conf.model_label(),
            a.planted_variable.clone(),
            num(a.planted_factor),
            n_t.to_string(),
            num(max_rel_diff(&ig.0, &ig.1)),
            num(max_rel_diff(&gti.0, &gti.1)),
            opt(spearman(&vg_before, &vg_after).ok().map(|r| r.rho)),
            flag(order(&vg_before) != order(&vg_after)),
            flag(selections_equal(&ig)?),
            flag(selections_equal(&gti)?),
        ]);
    }
    Ok(t)
}
