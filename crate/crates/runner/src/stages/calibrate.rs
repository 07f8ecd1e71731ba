//! Decile calibration, Gini ratio and overpayment of each proxy against
//! ablation utilities.

use anyhow::Result;
use gradval_core::incentive::{decile_calibration, Strategy};

use super::select::{mean_abs_utility, strategy_scores};
use crate::context::Context;
use crate::table::{flag, num, opt, Table};

pub const PROXIES: [Strategy; 5] = [
    Strategy::Ig,
    Strategy::Gti,
    Strategy::Vg,
    Strategy::Distance,
    Strategy::Oracle,
];

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let mut deciles = Table::new(
        "calibration_deciles",
        &[
            "configuration",
            "model",
            "mode",
            "patch",
            "proxy",
            "decile",
            "mean_abs_utility",
        ],
    );
    let mut summary = Table::new(
        "calibration_summary",
        &[
            "configuration",
            "model",
            "mode",
            "patch",
            "proxy",
            "gini_ratio",
            "overpayment",
            "share_spearman",
            "monotone_curve",
            "error",
        ],
    );
    for (c, conf) in ctx.desk_configurations() {
        for (s, spec) in ctx.specs.iter().enumerate() {
            let u = mean_abs_utility(ctx, c, s)?;
            for proxy in PROXIES {
                let scores = strategy_scores(ctx, c, s, proxy)?.expect("proxies have scores");
                let head = vec![
                    conf.label.clone(),
                    conf.model_label(),
                    spec.mode.name().to_string(),
                    spec.patch.to_string(),
                    proxy.name().to_string(),
                ];
                match decile_calibration(&scores, &u) {
                    Ok(r) => {
                        for (d, m) in r.decile_means.iter().enumerate() {
                            let mut row = head.clone();
                            row.extend([(d + 1).to_string(), num(*m)]);
                            deciles.push(row);
                        }
                        let monotone = r.decile_means.windows(2).all(|w| w[0] <= w[1]);
                        let mut row = head;
                        row.extend([
                            num(r.gini_ratio),
                            num(r.overpayment),
                            opt(r.share_spearman),
                            flag(monotone),
                            String::new(),
                        ]);
                        summary.push(row);
                    }
                    Err(e) => {
                        let mut row = head;
                        row.extend([
                            String::new(),
                            String::new(),
                            String::new(),
                            String::new(),
                            e.to_string(),
                        ]);
                        summary.push(row);
                    }
                }
            }
        }
    }
    Ok(vec![deciles, summary])
}
