//! Budget-balanced payments per proxy, with overpayment against the
//! utility-proportional allocation and payment concentration.

use anyhow::Result;
use gradval_core::incentive::{overpayment, payment, shares};
use gradval_core::metrics::{gini, top_k_indices};

use super::calibrate::PROXIES;
use super::select::{mean_abs_utility, strategy_scores};
use crate::context::Context;
use crate::table::{flag, num, Table};

const TOP_SHARE_K: usize = 10;

pub fn run(ctx: &Context) -> Result<Vec<Table>> {
    let budget = ctx.config.payment.budget;
    let reference = ctx.reference_spec_index()?;
    let mut summary = Table::new(
        "payment_summary",
        &[
            "configuration",
            "model",
            "mode",
            "patch",
            "proxy",
            "valid",
            "total",
            "min_amount",
            "overpayment",
            "underpayment",
            "top10_share",
            "gini",
            "gini_ratio",
            "error",
        ],
    );
    let mut per_station = Table::new(
        "payments",
        &[
            "configuration",
            "proxy",
            "station",
            "lat",
            "lon",
            "share",
            "amount",
            "true_share",
            "overpayment",
        ],
    );
    for (c, conf) in ctx.desk_configurations() {
        for (s, spec) in ctx.specs.iter().enumerate() {
            let u = mean_abs_utility(ctx, c, s)?;
            for proxy in PROXIES {
                let head = vec![
                    conf.label.clone(),
                    conf.model_label(),
                    spec.mode.name().to_string(),
                    spec.patch.to_string(),
                    proxy.name().to_string(),
                ];
                let scores = strategy_scores(ctx, c, s, proxy)?.expect("proxies have scores");
                let abs: Vec<f64> = scores.iter().map(|v| v.abs()).collect();
                let outcome = (|| -> Result<_> {
                    let alloc = payment(&abs, budget, proxy.name())?;
                    let truth = shares(&u)?;
                    let over = overpayment(&alloc.shares, &truth)?;
                    let g_proxy = gini(&abs)?;
                    let g_true = gini(&u)?;
                    Ok((alloc, truth, over, g_proxy, g_true))
                })();
                let mut row = head;
                match outcome {
                    Ok((alloc, truth, over, g_proxy, g_true)) => {
                        let top: f64 = top_k_indices(&alloc.shares, TOP_SHARE_K.min(abs.len()))
                            .iter()
                            .map(|&g| alloc.shares[g])
                            .sum();
                        row.extend([
                            flag(alloc.is_valid()),
                            num(alloc.amounts.iter().sum()),
                            num(alloc.amounts.iter().copied().fold(f64::INFINITY, f64::min)),
                            num(over.total),
                            num(over.underpayment),
                            num(top),
                            num(g_proxy),
                            if g_true > 0.0 {
                                num(g_proxy / g_true)
                            } else {
                                String::new()
                            },
                            String::new(),
                        ]);
                        if s == reference {
                            for (g, st) in ctx.stations.stations().iter().enumerate() {
                                let (lat, lon) = (ctx.grid.lat(st.lat_idx), ctx.grid.lon(st.lon_idx));
                                per_station.push(vec![
                                    conf.label.clone(),
                                    proxy.name().to_string(),
                                    g.to_string(),
                                    num(lat),
                                    num(lon),
                                    num(alloc.shares[g]),
                                    num(alloc.amounts[g]),
                                    num(truth[g]),
                                    num(over.per_station[g]),
                                ]);
                            }
                        }
                    }
                    Err(e) => {
                        row.extend(vec![String::new(); 8]);
                        row.push(format!("{e:#}"));
                    }
                }
                summary.push(row);
            }
        }
    }
    Ok(vec![summary, per_station])
}
