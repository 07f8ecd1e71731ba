//! Joint versus summed individual ablation of station sets.

use anyhow::Result;
use gradval_core::ablation::{
    joint_ablation, perturb_patch, spatial_utility, JointAblation, PerturbationSpec, SpatialUtilityMap,
};
use gradval_core::metrics::top_k_indices;
use gradval_core::model::ModelKind;
use rayon::prelude::*;

use super::finite_mean;
use crate::context::{Configuration, Context};
use crate::table::{flag, num, opt, Table};

/// Patch sizes probed on the desk models.
const DESK_PATCHES: [usize; 2] = [1, 5];

fn spec(ctx: &Context, patch: usize) -> PerturbationSpec {
    PerturbationSpec {
        seed: ctx.config.seed,
        ..PerturbationSpec::mean_replace(patch)
    }
}

/// The `k` stations with the largest positive prediction change under
/// single-cell mean replacement; patches of size 1 never overlap.
fn same_sign_set(
    ctx: &Context,
    conf: &Configuration,
    t: usize,
    spec: &PerturbationSpec,
    k: usize,
) -> Result<Vec<usize>> {
    let x = &ctx.fields[t];
    let base = conf.model.forward(x)?;
    let delta = (0..ctx.stations.len())
        .map(|g| {
            let p = perturb_patch(x, &ctx.stations, g, spec, &ctx.clim, &ctx.var_std)?;
            Ok(conf.model.forward(&p)? - base)
        })
        .collect::<gradval_core::Result<Vec<f64>>>()?;
    let positive = delta.iter().filter(|d| **d > 0.0).count();
    let negative = delta.iter().filter(|d| **d < 0.0).count();
    let sign = if positive >= negative { 1.0 } else { -1.0 };
    let oriented: Vec<f64> = delta.iter().map(|d| (sign * d).max(0.0)).collect();
    let n = k.min(positive.max(negative));
    anyhow::ensure!(n >= 2, "fewer than two stations move the prediction in one direction");
    Ok(top_k_indices(&oriented, n))
}

/// The `k` stations with the largest `|U_g|` at timestamp `t`, from the
/// cached maps when the spec is configured.
fn top_utility_set(
    ctx: &Context,
    c: usize,
    t: usize,
    spec: &PerturbationSpec,
    cached: Option<&[SpatialUtilityMap]>,
    k: usize,
) -> Result<Vec<usize>> {
    let u = match cached {
        Some(maps) => maps[t].abs.clone(),
        None => {
            let conf = &ctx.configurations[c];
            spatial_utility(
                &conf.model,
                &ctx.fields[t],
                conf.y_star[t],
                &ctx.stations,
                spec,
                &ctx.clim,
                &ctx.var_std,
            )?
            .abs
        }
    };
    Ok(top_k_indices(&u, k))
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let cfg = &ctx.config;
    let n_ts = cfg.ablation.subadditivity_timestamps.min(ctx.fields.len());
    let set_size = cfg.ablation.subadditivity_set_size.min(ctx.stations.len());
    let mut rows = Table::new(
        "subadditivity",
        &[
            "configuration",
            "model",
            "selection",
            "patch",
            "timestamp",
            "set",
            "joint",
            "sum",
            "ratio",
            "overlapping",
            "error",
        ],
    );
    // (model, selection, patch) -> ratios, overlap flags, undefined count
    let mut agg: Vec<((String, &'static str, usize), Vec<f64>, Vec<bool>, usize)> = Vec::new();
    for (c, conf) in ctx.configurations.iter().enumerate() {
        let plans: Vec<(&'static str, usize)> = match conf.kind {
            ModelKind::Linear => vec![("same_sign", 1)],
            ModelKind::Desk => DESK_PATCHES.iter().map(|&p| ("top_utility", p)).collect(),
        };
        for (selection, patch) in plans {
            let sp = spec(ctx, patch);
            // Filled before the parallel loop so the memo is never initialised from a worker.
            let cached = match (conf.kind, ctx.spec_index(&sp)) {
                (ModelKind::Desk, Ok(s)) => Some(ctx.spatial(c, s)?),
                _ => None,
            };
            let results: Vec<(Vec<usize>, Result<JointAblation>)> = (0..n_ts)
                .into_par_iter()
                .map(|t| {
                    let set = match selection {
                        "same_sign" => same_sign_set(ctx, conf, t, &sp, set_size),
                        _ => top_utility_set(ctx, c, t, &sp, cached.as_deref().map(Vec::as_slice), set_size),
                    };
                    match set {
                        Ok(set) => {
                            let j = joint_ablation(
                                &conf.model,
                                &ctx.fields[t],
                                conf.y_star[t],
                                &ctx.stations,
                                &set,
                                &sp,
                                &ctx.clim,
                                &ctx.var_std,
                            )
                            .map_err(anyhow::Error::from);
                            (set, j)
                        }
                        Err(e) => (Vec::new(), Err(e)),
                    }
                })
                .collect();
            let key = (conf.model_label(), selection, patch);
            let slot = match agg.iter().position(|(k, ..)| *k == key) {
                Some(i) => i,
                None => {
                    agg.push((key, Vec::new(), Vec::new(), 0));
                    agg.len() - 1
                }
            };
            for (t, (set, r)) in results.into_iter().enumerate() {
                let set_cell = set.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(" ");
                let mut row = vec![
                    conf.label.clone(),
                    conf.model_label(),
                    selection.to_string(),
                    patch.to_string(),
                    t.to_string(),
                    set_cell,
                ];
                match r {
                    Ok(j) => {
                        row.extend([
                            num(j.joint),
                            num(j.sum),
                            opt(j.ratio),
                            flag(j.overlapping),
                            String::new(),
                        ]);
                        let a = &mut agg[slot];
                        match j.ratio {
                            Some(r) => a.1.push(r),
                            None => a.3 += 1,
                        }
                        a.2.push(j.overlapping);
                    }
                    Err(e) => row.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        format!("{e:#}"),
                    ]),
                }
                rows.push(row);
            }
        }
    }
    let mut summary = Table::new(
        "subadditivity_summary",
        &[
            "model",
            "selection",
            "patch",
            "n_sets",
            "n_undefined",
            "frac_overlapping",
            "mean_ratio",
            "min_ratio",
            "max_ratio",
            "max_abs_ratio_minus_one",
            "frac_subadditive",
        ],
    );
    for ((model, selection, patch), ratios, overlaps, undefined) in agg {
        let n = overlaps.len();
        let fold =
            |f: fn(f64, f64) -> f64, init: f64| (!ratios.is_empty()).then(|| ratios.iter().copied().fold(init, f));
        summary.push(vec![
            model,
            selection.to_string(),
            patch.to_string(),
            n.to_string(),
            undefined.to_string(),
            opt((n > 0).then(|| overlaps.iter().filter(|o| **o).count() as f64 / n as f64)),
            opt(finite_mean(ratios.iter().copied())),
            opt(fold(f64::min, f64::INFINITY)),
            opt(fold(f64::max, f64::NEG_INFINITY)),
            opt((!ratios.is_empty()).then(|| ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max))),
            opt((!ratios.is_empty()).then(|| ratios.iter().filter(|r| **r < 1.0).count() as f64 / ratios.len() as f64)),
        ]);
    }
    Ok(vec![rows, summary])
}
