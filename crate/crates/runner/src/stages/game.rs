//! Anomaly-inflation and spoofing scenarios against the IG payment proxy.

use std::sync::Arc;

use anyhow::Result;
use gradval_core::attribution::AttributionConfig;
use gradval_core::gaming::{
    gaming_baseline, make_scenarios, run_gaming_experiment, AttackKind, AttackScenario, GamingBaseline, GamingOutcome,
    Placement, ScenarioGrid, Scope,
};
use gradval_core::rng;

use super::finite_mean;
use crate::context::Context;
use crate::table::{num, opt, Table};

/// Scenario family within a gaming run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Base,
    Null,
    Spoof,
    ExtendedPct,
    ExtendedPlacement,
    ExtendedScope,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Base => "base",
            Group::Null => "null",
            Group::Spoof => "spoof",
            Group::ExtendedPct => "extended_pct",
            Group::ExtendedPlacement => "extended_placement",
            Group::ExtendedScope => "extended_scope",
        }
    }
}

/// All scenarios of one gaming configuration with their outcomes.
#[derive(Debug, Clone)]
pub struct GamingRun {
    pub configuration: usize,
    pub label: String,
    pub scenarios: Vec<AttackScenario>,
    pub groups: Vec<Group>,
    pub outcomes: Vec<GamingOutcome>,
    pub baseline: GamingBaseline,
    pub skipped: Vec<String>,
}

impl GamingRun {
    pub fn iter(&self) -> impl Iterator<Item = (&AttackScenario, Group, &GamingOutcome)> {
        self.scenarios
            .iter()
            .zip(&self.groups)
            .zip(&self.outcomes)
            .map(|((s, g), o)| (s, *g, o))
    }
}

pub fn scope_name(scope: Scope) -> &'static str {
    match scope {
        Scope::SingleTargetVar => "single_target_var",
        Scope::SingleOtherVar => "single_other_var",
        Scope::AllSurface => "all_surface",
    }
}

pub fn kind_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Inflate => "inflate",
        AttackKind::Spoof => "spoof",
    }
}

/// Indices of the configurations under attack.
pub fn gaming_configurations(ctx: &Context) -> Vec<usize> {
    let g = &ctx.config.gaming;
    ctx.desk_configurations()
        .filter(|(_, c)| {
            c.depth == g.depth
                && c.target.variable_name == g.target_variable
                && (g.targets.is_empty() || g.targets.contains(&c.target.name))
        })
        .map(|(i, _)| i)
        .collect()
}

fn scenario_plan(ctx: &Context, c: usize, extended: bool) -> Result<(Vec<AttackScenario>, Vec<Group>, Vec<String>)> {
    let g = &ctx.config.gaming;
    let base_seed = rng::mix(&[ctx.config.seed, 301, c as u64]);
    let grid = |kind, n: Vec<usize>, pcts: Vec<f64>, scopes, placements, seeds| ScenarioGrid {
        kind,
        n_attackers: n,
        pcts,
        scopes,
        placements,
        seeds,
        base_seed,
    };
    let all = vec![Scope::AllSurface];
    let uniform = vec![Placement::Uniform];
    let mut plan = vec![
        (
            Group::Base,
            grid(
                AttackKind::Inflate,
                g.n_attackers.clone(),
                g.pcts.clone(),
                all.clone(),
                uniform.clone(),
                g.seeds,
            ),
        ),
        (
            Group::Null,
            grid(
                AttackKind::Inflate,
                g.n_attackers.clone(),
                vec![0.0],
                all.clone(),
                uniform.clone(),
                g.null_seeds,
            ),
        ),
    ];
    if g.spoof {
        plan.push((
            Group::Spoof,
            grid(
                AttackKind::Spoof,
                g.n_attackers.clone(),
                vec![0.0],
                all.clone(),
                uniform.clone(),
                g.seeds,
            ),
        ));
    }
    if extended {
        let n = vec![g.extended_n];
        let pct = vec![g.extended_pct];
        plan.push((
            Group::ExtendedPct,
            grid(
                AttackKind::Inflate,
                g.n_attackers.clone(),
                g.extended_pcts.clone(),
                all.clone(),
                uniform.clone(),
                g.seeds,
            ),
        ));
        plan.push((
            Group::ExtendedPlacement,
            grid(
                AttackKind::Inflate,
                n.clone(),
                pct.clone(),
                all,
                g.extended_placements.clone(),
                g.seeds,
            ),
        ));
        plan.push((
            Group::ExtendedScope,
            grid(AttackKind::Inflate, n, pct, g.extended_scopes.clone(), uniform, g.seeds),
        ));
    }
    let target = &ctx.configurations[c].target;
    let (mut scenarios, mut groups, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (group, sg) in plan {
        let (sc, sk) = make_scenarios(&sg, &ctx.stations, target)?;
        for s in sc {
            if !scenarios.iter().any(|o: &AttackScenario| o.id == s.id) {
                scenarios.push(s);
                groups.push(group);
            }
        }
        skipped.extend(sk);
    }
    Ok((scenarios, groups, skipped))
}

/// Memoised gaming run of configuration `c`.
pub fn gaming_run(ctx: &Context, c: usize, extended: bool) -> Result<Arc<GamingRun>> {
    let conf = &ctx.configurations[c];
    ctx.gaming_run(&conf.label, || {
        let g = &ctx.config.gaming;
        let n_ts = g.timestamps.min(ctx.fields.len());
        let fields = &ctx.fields[..n_ts];
        let y_star = &conf.y_star[..n_ts];
        let attr = AttributionConfig::ig(g.steps);
        let baseline = gaming_baseline(&conf.model, fields, y_star, &ctx.clim, &ctx.stations, &attr)?;
        let (scenarios, groups, skipped) = scenario_plan(ctx, c, extended)?;
        let outcomes = run_gaming_experiment(
            &conf.model,
            fields,
            y_star,
            &ctx.clim,
            &ctx.stations,
            &conf.target,
            &scenarios,
            &attr,
            &baseline,
        )?;
        Ok(GamingRun {
            configuration: c,
            label: conf.label.clone(),
            scenarios,
            groups,
            outcomes,
            baseline,
            skipped,
        })
    })
}

/// Gaming runs of every attacked configuration; the first one carries the
/// extended scenario families.
pub fn gaming_runs(ctx: &Context) -> Result<Vec<Arc<GamingRun>>> {
    gaming_configurations(ctx)
        .into_iter()
        .enumerate()
        .map(|(i, c)| gaming_run(ctx, c, i == 0))
        .collect()
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let runs = gaming_runs(ctx)?;
    anyhow::ensure!(!runs.is_empty(), "no configuration matches the gaming section");
    let mut outcomes = Table::new(
        "gaming_outcomes",
        &[
            "configuration",
            "scenario",
            "group",
            "kind",
            "placement",
            "scope",
            "n_attackers",
            "pct",
            "attackers",
            "inflation_ratio",
            "mae_change",
            "honest_share_change_pp",
            "attacker_share_change_pp",
        ],
    );
    let mut skipped = Table::new("gaming_skipped", &["configuration", "scenario"]);
    // (group, kind, placement, scope, n, pct) -> (inflation, mae, honest, attacker)
    type Key = (&'static str, &'static str, &'static str, &'static str, usize, String);
    let mut agg: Vec<(Key, Vec<[f64; 4]>)> = Vec::new();
    for run in &runs {
        for (sc, group, o) in run.iter() {
            outcomes.push(vec![
                run.label.clone(),
                sc.id.clone(),
                group.name().to_string(),
                kind_name(sc.kind).to_string(),
                sc.placement.name().to_string(),
                scope_name(sc.scope).to_string(),
                sc.n_attackers().to_string(),
                num(sc.pct),
                sc.attackers.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(" "),
                num(o.inflation_ratio),
                num(o.mae_change),
                num(o.honest_share_change_pp),
                num(o.attacker_share_change_pp),
            ]);
            let key = (
                group.name(),
                kind_name(sc.kind),
                sc.placement.name(),
                scope_name(sc.scope),
                sc.n_attackers(),
                num(sc.pct),
            );
            let v = [
                o.inflation_ratio,
                o.mae_change,
                o.honest_share_change_pp,
                o.attacker_share_change_pp,
            ];
            match agg.iter_mut().find(|(k, _)| *k == key) {
                Some((_, x)) => x.push(v),
                None => agg.push((key, vec![v])),
            }
        }
        for s in &run.skipped {
            skipped.push(vec![run.label.clone(), s.clone()]);
        }
    }
    let mut summary = Table::new(
        "gaming_summary",
        &[
            "group",
            "kind",
            "placement",
            "scope",
            "n_attackers",
            "pct",
            "n_scenarios",
            "mean_inflation_ratio",
            "mean_mae_change",
            "mean_honest_share_change_pp",
            "mean_attacker_share_change_pp",
        ],
    );
    for ((group, kind, placement, scope, n, pct), v) in agg {
        let col = |i: usize| opt(finite_mean(v.iter().map(|x| x[i])));
        summary.push(vec![
            group.to_string(),
            kind.to_string(),
            placement.to_string(),
            scope.to_string(),
            n.to_string(),
            pct,
            v.len().to_string(),
            col(0),
            col(1),
            col(2),
            col(3),
        ]);
    }
    Ok(vec![outcomes, summary, skipped])
}
