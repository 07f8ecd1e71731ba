//! Attacker detection on the gaming outcomes.

use anyhow::Result;
use gradval_core::gaming::{
    detector_d7_supervised, evaluate_detection, run_detectors, station_features, AttackKind, DetectionResult,
    LabeledScenario,
};
use gradval_core::rng;

use super::finite_mean;
use super::game::{gaming_runs, kind_name, scope_name, Group};
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

fn attacker_mean(r: &DetectionResult, attackers: &[usize]) -> f64 {
    attackers.iter().map(|&g| r.scores[g]).sum::<f64>() / attackers.len() as f64
}

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let runs = gaming_runs(ctx)?;
    let per_ts = ctx.config.gaming.per_timestamp_d4;
    let mut rows = Table::new(
        "detection",
        &[
            "configuration",
            "scenario",
            "group",
            "kind",
            "placement",
            "scope",
            "n_attackers",
            "pct",
            "detector",
            "pr_auc",
            "prevalence",
            "hit_at_1",
            "hit_at_5",
            "attacker_mean_score",
        ],
    );
    // (configuration, scenario index, result)
    let mut results: Vec<(usize, usize, DetectionResult)> = Vec::new();
    let mut labeled: Vec<(usize, usize, LabeledScenario)> = Vec::new();
    for (r, run) in runs.iter().enumerate() {
        let target = &ctx.configurations[run.configuration].target;
        for (i, (sc, group, o)) in run.iter().enumerate() {
            if group == Group::Null {
                continue;
            }
            let base = per_ts.then_some(run.baseline.unsigned.as_slice());
            for d in run_detectors(sc, o, &ctx.stations, base)? {
                results.push((r, i, d));
            }
            labeled.push((
                r,
                i,
                LabeledScenario {
                    configuration: run.label.clone(),
                    scenario: sc.clone(),
                    features: station_features(o, &ctx.stations, target)?,
                    labels: sc.labels(ctx.stations.len()),
                },
            ));
        }
    }
    let mut notes = Vec::new();
    for kind in [AttackKind::Inflate, AttackKind::Spoof] {
        let subset: Vec<&(usize, usize, LabeledScenario)> =
            labeled.iter().filter(|(_, _, l)| l.scenario.kind == kind).collect();
        if subset.is_empty() {
            continue;
        }
        let data: Vec<LabeledScenario> = subset.iter().map(|(_, _, l)| l.clone()).collect();
        match detector_d7_supervised(&data, rng::mix(&[ctx.config.seed, 401, kind as u64])) {
            Ok(d7) => {
                // Results come grouped by held-out configuration, in data order.
                let mut order: Vec<&&(usize, usize, LabeledScenario)> = subset.iter().collect();
                order.sort_by(|a, b| a.2.configuration.cmp(&b.2.configuration));
                for ((r, i, l), d) in order.into_iter().zip(d7) {
                    debug_assert_eq!(l.scenario.id, d.scenario_id);
                    results.push((*r, *i, d));
                }
            }
            Err(e) => notes.push(format!("D7 {}: {e}", kind_name(kind))),
        }
    }
    results.sort_by_key(|(r, i, d)| (*r, *i, d.detector as u8));
    for (r, i, d) in &results {
        let run = &runs[*r];
        let sc = &run.scenarios[*i];
        rows.push(vec![
            run.label.clone(),
            sc.id.clone(),
            run.groups[*i].name().to_string(),
            kind_name(sc.kind).to_string(),
            sc.placement.name().to_string(),
            scope_name(sc.scope).to_string(),
            sc.n_attackers().to_string(),
            num(sc.pct),
            d.detector.name().to_string(),
            num(d.pr_auc),
            num(d.prevalence),
            flag(d.hit_at_1),
            flag(d.hit_at_5),
            num(attacker_mean(d, &sc.attackers)),
        ]);
    }

    let mut summary = Table::new(
        "detection_summary",
        &[
            "kind",
            "configuration",
            "detector",
            "n_scenarios",
            "pr_auc",
            "prevalence",
            "hit_at_1",
            "hit_at_5",
            "mean_attacker_score",
        ],
    );
    for kind in [AttackKind::Inflate, AttackKind::Spoof] {
        let labels: Vec<Option<usize>> = std::iter::once(None).chain((0..runs.len()).map(Some)).collect();
        for which in labels {
            let sel: Vec<&(usize, usize, DetectionResult)> = results
                .iter()
                .filter(|(r, i, _)| runs[*r].scenarios[*i].kind == kind && which.is_none_or(|w| w == *r))
                .collect();
            if sel.is_empty() {
                continue;
            }
            let plain: Vec<DetectionResult> = sel.iter().map(|(_, _, d)| d.clone()).collect();
            for s in evaluate_detection(&plain) {
                let scores = sel
                    .iter()
                    .filter(|(_, _, d)| d.detector == s.detector)
                    .map(|(r, i, d)| attacker_mean(d, &runs[*r].scenarios[*i].attackers));
                summary.push(vec![
                    kind_name(kind).to_string(),
                    which.map_or("all".to_string(), |w| runs[w].label.clone()),
                    s.detector.name().to_string(),
                    s.n_scenarios.to_string(),
                    num(s.pr_auc),
                    num(s.prevalence),
                    num(s.hit_at_1),
                    num(s.hit_at_5),
                    opt(finite_mean(scores)),
                ]);
            }
        }
    }

    let mut magnitude = Table::new(
        "d4_by_magnitude",
        &["configuration", "pct", "n_scenarios", "mean_attacker_d4", "hit_at_5"],
    );
    for (r, run) in runs.iter().enumerate() {
        let mut pcts: Vec<f64> = Vec::new();
        for (i, sc) in run.scenarios.iter().enumerate() {
            if matches!(run.groups[i], Group::Base | Group::ExtendedPct) && !pcts.contains(&sc.pct) {
                pcts.push(sc.pct);
            }
        }
        pcts.sort_by(f64::total_cmp);
        for pct in pcts {
            let sel: Vec<(f64, bool)> = results
                .iter()
                .filter(|(rr, i, d)| {
                    *rr == r
                        && matches!(run.groups[*i], Group::Base | Group::ExtendedPct)
                        && run.scenarios[*i].pct == pct
                        && d.detector == gradval_core::gaming::Detector::D4
                })
                .map(|(_, i, d)| (attacker_mean(d, &run.scenarios[*i].attackers), d.hit_at_5))
                .collect();
            let n = sel.len();
            magnitude.push(vec![
                run.label.clone(),
                num(pct),
                n.to_string(),
                opt(finite_mean(sel.iter().map(|s| s.0))),
                opt((n > 0).then(|| sel.iter().filter(|s| s.1).count() as f64 / n as f64)),
            ]);
        }
    }
    let mut note_table = Table::new("detection_notes", &["note"]);
    for n in notes {
        note_table.push(vec![n]);
    }
    Ok(vec![rows, summary, magnitude, note_table])
}
