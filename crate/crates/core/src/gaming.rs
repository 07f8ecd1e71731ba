//! Adversarial data manipulation and its detection.
//!
//! Two attacks act on the attacker stations' cells: anomaly inflation
//! multiplies the deviation from climatology, climatological-mean spoofing
//! replaces the report with the long-term mean. Detectors turn per-station
//! proxy scores into suspicion scores; detector formulas are reconstructions
//! from short descriptions and are documented on each function.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, spatial_importance, spatial_signed, AttributionConfig};
use crate::error::{Error, Result};
use crate::grid::{Climatology, FieldTensor, StationGrid, TargetSpec};
use crate::metrics::{average_ranks, pr_auc, top_k_indices};
use crate::model::ForecastModel;
use crate::rng::{self, tag};

/// Floor applied to scores before taking logarithms or dividing.
pub const EPS: f64 = 1e-12;
pub const CLOSE_KM: f64 = 500.0;
pub const MID_KM: f64 = 1500.0;
pub const D5_NEIGHBOURS: usize = 8;
pub const D5_MIN_NEIGHBOURS: usize = 5;
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Inflate,
    Spoof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    SingleTargetVar,
    SingleOtherVar,
    AllSurface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Uniform,
    Close,
    Mid,
    Mixed,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::Uniform => "uniform",
            Placement::Close => "close",
            Placement::Mid => "mid",
            Placement::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub id: String,
    pub kind: AttackKind,
    /// Attacker station positions, ascending.
    pub attackers: Vec<usize>,
    /// Inflation percentage; ignored by spoofing.
    pub pct: f64,
    pub scope: Scope,
    pub placement: Placement,
    pub seed: u64,
}

impl AttackScenario {
    pub fn n_attackers(&self) -> usize {
        self.attackers.len()
    }

    pub fn labels(&self, n_stations: usize) -> Vec<bool> {
        let mut l = vec![false; n_stations];
        for &a in &self.attackers {
            l[a] = true;
        }
        l
    }

    pub fn validate(&self, stations: &StationGrid) -> Result<()> {
        if self.attackers.is_empty() {
            return Err(Error::InvalidArgument("scenario without attackers".into()));
        }
        let mut s = self.attackers.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.attackers.len() || s.iter().any(|&a| a >= stations.len()) {
            return Err(Error::InvalidStation("attackers must be distinct stations".into()));
        }
        if self.kind == AttackKind::Inflate && !(self.pct >= 0.0 && self.pct.is_finite()) {
            return Err(Error::InvalidArgument("inflation pct must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Variables an attack writes to.
pub fn scope_variables(scope: Scope, target: &TargetSpec, n_vars: usize) -> Result<Vec<usize>> {
    match scope {
        Scope::SingleTargetVar => Ok(vec![target.variable]),
        Scope::SingleOtherVar => {
            if n_vars < 2 {
                return Err(Error::InvalidArgument("no variable other than the target".into()));
            }
            Ok(vec![(target.variable + 1) % n_vars])
        }
        Scope::AllSurface => Ok((0..n_vars).collect()),
    }
}

/// Attacked copy of `x`. Inflation writes `clim + (1 + pct/100)(x - clim)`
/// as `x + (pct/100)(x - clim)`, which is exact at `pct = 0`.
pub fn apply_attack(
    x: &FieldTensor,
    scenario: &AttackScenario,
    clim: &Climatology,
    stations: &StationGrid,
    target: &TargetSpec,
) -> Result<FieldTensor> {
    scenario.validate(stations)?;
    x.check_same_grid(clim.field())?;
    let vars = scope_variables(scenario.scope, target, x.grid().n_vars())?;
    let mut out = x.clone();
    let c = clim.field();
    for &a in &scenario.attackers {
        let s = stations.stations()[a];
        for &v in &vars {
            let (xv, cv) = (x.get(v, s.lat_idx, s.lon_idx), c.get(v, s.lat_idx, s.lon_idx));
            let new = match scenario.kind {
                AttackKind::Inflate => xv + scenario.pct / 100.0 * (xv - cv),
                AttackKind::Spoof => cv,
            };
            out.set(v, s.lat_idx, s.lon_idx, new);
        }
    }
    Ok(out)
}

/// Seeded attacker draw for a placement stratum.
pub fn draw_attackers(
    stations: &StationGrid,
    target: &TargetSpec,
    n: usize,
    placement: Placement,
    seed: u64,
) -> Result<Vec<usize>> {
    let d = stations.distances_km(target.cell_latlon(stations.grid()));
    let close: Vec<usize> = (0..d.len()).filter(|&g| d[g] < CLOSE_KM).collect();
    let mid: Vec<usize> = (0..d.len()).filter(|&g| (CLOSE_KM..=MID_KM).contains(&d[g])).collect();
    let all: Vec<usize> = (0..d.len()).collect();
    let mut r = rng::stream(seed, tag::SCENARIO, n as u64);
    let mut pick = |pool: &[usize], k: usize| -> Result<Vec<usize>> {
        if k > pool.len() {
            return Err(Error::InvalidArgument(format!(
                "placement {} needs {k} stations, only {} available",
                placement.name(),
                pool.len()
            )));
        }
        Ok(index::sample(&mut r, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect())
    };
    let mut chosen = match placement {
        Placement::Uniform => pick(&all, n)?,
        Placement::Close => pick(&close, n)?,
        Placement::Mid => pick(&mid, n)?,
        Placement::Mixed => {
            let n_close = n.div_ceil(2);
            let mut a = pick(&close, n_close)?;
            a.extend(pick(&mid, n - n_close)?);
            a
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Factorial scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub kind: AttackKind,
    pub n_attackers: Vec<usize>,
    pub pcts: Vec<f64>,
    pub scopes: Vec<Scope>,
    pub placements: Vec<Placement>,
    pub seeds: usize,
    pub base_seed: u64,
}

/// Scenarios of a grid. Combinations whose placement stratum has too few
/// stations are skipped and reported in the second element.
pub fn make_scenarios(
    grid: &ScenarioGrid,
    stations: &StationGrid,
    target: &TargetSpec,
) -> Result<(Vec<AttackScenario>, Vec<String>)> {
    let pcts: Vec<f64> = match grid.kind {
        AttackKind::Inflate => grid.pcts.clone(),
        AttackKind::Spoof => vec![0.0],
    };
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for &placement in &grid.placements {
        for &scope in &grid.scopes {
            for &n in &grid.n_attackers {
                for &pct in &pcts {
                    for s in 0..grid.seeds {
                        let kind = match grid.kind {
                            AttackKind::Inflate => "inflate",
                            AttackKind::Spoof => "spoof",
                        };
                        let scope_name = match scope {
                            Scope::SingleTargetVar => "tvar",
                            Scope::SingleOtherVar => "ovar",
                            Scope::AllSurface => "all",
                        };
                        let id = format!("{kind}-{}-{scope_name}-n{n}-p{pct}-s{s}", placement.name());
                        let seed = rng::mix(&[grid.base_seed, n as u64, s as u64, placement as u64]);
                        match draw_attackers(stations, target, n, placement, seed) {
                            Ok(attackers) => out.push(AttackScenario {
                                id,
                                kind: grid.kind,
                                attackers,
                                pct,
                                scope,
                                placement,
                                seed,
                            }),
                            Err(e) => skipped.push(format!("{id}: {e}")),
                        }
                    }
                }
            }
        }
    }
    Ok((out, skipped))
}

/// Clean-period proxy scores shared by all scenarios of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct GamingBaseline {
    /// Per timestamp, per station unsigned score.
    pub unsigned: Vec<Vec<f64>>,
    pub signed: Vec<Vec<f64>>,
    pub abs_error: Vec<f64>,
}

impl GamingBaseline {
    pub fn mean_unsigned(&self) -> Vec<f64> {
        column_mean(&self.unsigned)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamingOutcome {
    pub scenario_id: String,
    pub baseline_mean: Vec<f64>,
    pub attack_mean: Vec<f64>,
    pub baseline_signed_mean: Vec<f64>,
    pub attack_signed_mean: Vec<f64>,
    /// Per timestamp, per station unsigned attack-period score.
    pub attack_per_timestamp: Vec<Vec<f64>>,
    /// Mean over attackers of attack / baseline score.
    pub inflation_ratio: f64,
    /// Mean change of the absolute forecast error.
    pub mae_change: f64,
    /// Mean absolute share change of honest stations, percentage points.
    pub honest_share_change_pp: f64,
    /// Mean share change of attackers, percentage points.
    pub attacker_share_change_pp: f64,
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; n];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let t = rows.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    acc
}

fn share_vec(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Clean-period scores and errors.
pub fn gaming_baseline(
    model: &ForecastModel,
    fields: &[FieldTensor],
    y_star: &[f64],
    clim: &Climatology,
    stations: &StationGrid,
    config: &AttributionConfig,
) -> Result<GamingBaseline> {
    if fields.len() != y_star.len() || fields.is_empty() {
        return Err(Error::InvalidArgument(
            "one verification value per field required".into(),
        ));
    }
    let per: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..fields.len())
        .into_par_iter()
        .map(|t| {
            let a = attribute(model, config, fields, t, clim)?;
            let err = (model.forward(&fields[t])? - y_star[t]).abs();
            Ok((spatial_importance(&a, stations)?, spatial_signed(&a, stations)?, err))
        })
        .collect::<Result<_>>()?;
    let mut b = GamingBaseline {
        unsigned: Vec::new(),
        signed: Vec::new(),
        abs_error: Vec::new(),
    };
    for (u, s, e) in per {
        b.unsigned.push(u);
        b.signed.push(s);
        b.abs_error.push(e);
    }
    Ok(b)
}

/// Paired clean/attacked comparison of every scenario over the same
/// timestamps. The persistence baseline is not meaningful under attack and is
/// evaluated against the attacked predecessor field.
#[allow(clippy::too_many_arguments)]
pub fn run_gaming_experiment(
    model: &ForecastModel,
    fields: &[FieldTensor],
    y_star: &[f64],
    clim: &Climatology,
    stations: &StationGrid,
    target: &TargetSpec,
    scenarios: &[AttackScenario],
    config: &AttributionConfig,
    baseline: &GamingBaseline,
) -> Result<Vec<GamingOutcome>> {
    if baseline.unsigned.len() != fields.len() {
        return Err(Error::InvalidArgument(
            "baseline was computed on different timestamps".into(),
        ));
    }
    let baseline_mean = baseline.mean_unsigned();
    let baseline_signed_mean = column_mean(&baseline.signed);
    let base_share = share_vec(&baseline_mean);
    scenarios
        .iter()
        .map(|sc| {
            let attacked: Vec<FieldTensor> = fields
                .iter()
                .map(|x| apply_attack(x, sc, clim, stations, target))
                .collect::<Result<_>>()?;
            let per: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..attacked.len())
                .into_par_iter()
                .map(|t| {
                    let a = attribute(model, config, &attacked, t, clim)?;
                    let err = (model.forward(&attacked[t])? - y_star[t]).abs();
                    Ok((spatial_importance(&a, stations)?, spatial_signed(&a, stations)?, err))
                })
                .collect::<Result<_>>()?;
            let attack_per_timestamp: Vec<Vec<f64>> = per.iter().map(|p| p.0.clone()).collect();
            let attack_signed: Vec<Vec<f64>> = per.iter().map(|p| p.1.clone()).collect();
            let attack_mean = column_mean(&attack_per_timestamp);
            let inflation_ratio = sc
                .attackers
                .iter()
                .map(|&g| attack_mean[g].max(EPS) / baseline_mean[g].max(EPS))
                .sum::<f64>()
                / sc.attackers.len() as f64;
            let mae_change = per.iter().zip(&baseline.abs_error).map(|(p, e)| p.2 - e).sum::<f64>() / per.len() as f64;
            let att_share = share_vec(&attack_mean);
            let labels = sc.labels(stations.len());
            let (mut honest, mut attacker) = (0.0, 0.0);
            for g in 0..stations.len() {
                let d = 100.0 * (att_share[g] - base_share[g]);
                if labels[g] {
                    attacker += d;
                } else {
                    honest += d.abs();
                }
            }
            let n_honest = (stations.len() - sc.attackers.len()).max(1) as f64;
            Ok(GamingOutcome {
                scenario_id: sc.id.clone(),
                baseline_mean: baseline_mean.clone(),
                attack_mean,
                baseline_signed_mean: baseline_signed_mean.clone(),
                attack_signed_mean: column_mean(&attack_signed),
                attack_per_timestamp,
                inflation_ratio,
                mae_change,
                honest_share_change_pp: honest / n_honest,
                attacker_share_change_pp: attacker / sc.attackers.len() as f64,
            })
        })
        .collect()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("score vectors differ in length".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    Ok(())
}

/// D4, proxy log-ratio: `log(max(attack, eps) / max(baseline, eps))` of the
/// period-mean unsigned scores.
pub fn detector_d4(baseline: &[f64], attack: &[f64]) -> Result<Vec<f64>> {
    check_pair(baseline, attack)?;
    Ok(baseline
        .iter()
        .zip(attack)
        .map(|(b, a)| (a.max(EPS) / b.max(EPS)).ln())
        .collect())
}

/// D4 variant averaging per-timestamp log-ratios.
pub fn detector_d4_per_timestamp(baseline: &[Vec<f64>], attack: &[Vec<f64>]) -> Result<Vec<f64>> {
    if baseline.len() != attack.len() || baseline.is_empty() {
        return Err(Error::InvalidArgument("periods differ in length".into()));
    }
    let per: Vec<Vec<f64>> = baseline
        .iter()
        .zip(attack)
        .map(|(b, a)| detector_d4(b, a))
        .collect::<Result<_>>()?;
    Ok(column_mean(&per))
}

fn descending_ranks(v: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    average_ranks(&neg)
}

/// D3, rank jump: `rank(baseline) - rank(attack)` with rank 1 the highest
/// score and tied scores sharing their mean rank.
pub fn detector_d3(baseline: &[f64], attack: &[f64]) -> Result<Vec<f64>> {
    check_pair(baseline, attack)?;
    let rb = descending_ranks(baseline);
    let ra = descending_ranks(attack);
    Ok(rb.iter().zip(&ra).map(|(b, a)| b - a).collect())
}

/// D5, spatial residual: each station's score is predicted by the
/// inverse-distance-weighted mean of its nearest neighbours (every station
/// tied with the eighth-nearest is included) and the suspicion is
/// `|observed - predicted| / (predicted + eps)`.
pub fn detector_d5(scores: &[f64], stations: &StationGrid) -> Result<Vec<f64>> {
    if scores.len() != stations.len() {
        return Err(Error::InvalidArgument("one score per station required".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let st = stations.stations();
    (0..stations.len())
        .map(|g| {
            let here = stations.latlon(g);
            let mut nb: Vec<(f64, usize, usize)> = (0..stations.len())
                .filter(|&h| h != g)
                .map(|h| (crate::grid::haversine(here, stations.latlon(h)), st[h].id, h))
                .collect();
            if nb.len() < D5_MIN_NEIGHBOURS {
                return Err(Error::Degenerate(format!("station {} is isolated", st[g].id)));
            }
            nb.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let cut = nb[(D5_NEIGHBOURS.min(nb.len())) - 1].0;
            let (mut wsum, mut acc) = (0.0, 0.0);
            for &(d, _, h) in nb.iter().take_while(|n| n.0 <= cut) {
                let w = 1.0 / d.max(EPS);
                wsum += w;
                acc += w * scores[h];
            }
            let pred = acc / wsum;
            Ok((scores[g] - pred).abs() / (pred + EPS))
        })
        .collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// U1, baseline-free robust z-score against the cross-station median and
/// scaled median absolute deviation of the same snapshot.
pub fn detector_u1(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() || scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("need finite scores".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let med = median(&s);
    let mut dev: Vec<f64> = scores.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = MAD_SCALE * median(&dev);
    if mad == 0.0 {
        return Err(Error::Degenerate("median absolute deviation is zero".into()));
    }
    Ok(scores.iter().map(|v| (v - med) / mad).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    D3,
    D4,
    D5,
    D7,
    U1,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::D3 => "D3",
            Detector::D4 => "D4",
            Detector::D5 => "D5",
            Detector::D7 => "D7",
            Detector::U1 => "U1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detector: Detector,
    pub scenario_id: String,
    pub scores: Vec<f64>,
    pub pr_auc: f64,
    pub hit_at_1: bool,
    pub hit_at_5: bool,
    pub prevalence: f64,
}

impl DetectionResult {
    pub fn new(detector: Detector, scenario: &AttackScenario, scores: Vec<f64>) -> Result<Self> {
        let labels = scenario.labels(scores.len());
        let auc = pr_auc(&scores, &labels)?;
        let hit = |k: usize| top_k_indices(&scores, k.min(scores.len())).iter().any(|i| labels[*i]);
        Ok(Self {
            detector,
            scenario_id: scenario.id.clone(),
            pr_auc: auc,
            hit_at_1: hit(1),
            hit_at_5: hit(5),
            prevalence: scenario.attackers.len() as f64 / scores.len() as f64,
            scores,
        })
    }
}

/// Baseline-free and baseline-relative detectors on one outcome. U1 is absent
/// when the snapshot has zero spread.
pub fn run_detectors(
    scenario: &AttackScenario,
    outcome: &GamingOutcome,
    stations: &StationGrid,
    per_timestamp_d4: Option<&[Vec<f64>]>,
) -> Result<Vec<DetectionResult>> {
    let d4 = match per_timestamp_d4 {
        Some(base) => detector_d4_per_timestamp(base, &outcome.attack_per_timestamp)?,
        None => detector_d4(&outcome.baseline_mean, &outcome.attack_mean)?,
    };
    let mut out = vec![
        DetectionResult::new(
            Detector::D3,
            scenario,
            detector_d3(&outcome.baseline_mean, &outcome.attack_mean)?,
        )?,
        DetectionResult::new(Detector::D4, scenario, d4)?,
        DetectionResult::new(Detector::D5, scenario, detector_d5(&outcome.attack_mean, stations)?)?,
    ];
    if let Ok(u1) = detector_u1(&outcome.attack_mean) {
        out.push(DetectionResult::new(Detector::U1, scenario, u1)?);
    }
    Ok(out)
}

pub const N_FEATURES: usize = 5;

/// Per-station features for the supervised detector:
/// `(d3, d4, d5, baseline share, distance km)`.
pub fn station_features(
    outcome: &GamingOutcome,
    stations: &StationGrid,
    target: &TargetSpec,
) -> Result<Vec<[f64; N_FEATURES]>> {
    let d3 = detector_d3(&outcome.baseline_mean, &outcome.attack_mean)?;
    let d4 = detector_d4(&outcome.baseline_mean, &outcome.attack_mean)?;
    let d5 = detector_d5(&outcome.attack_mean, stations)?;
    let share = share_vec(&outcome.baseline_mean);
    let dist = stations.distances_km(target.cell_latlon(stations.grid()));
    Ok((0..stations.len())
        .map(|g| [d3[g], d4[g], d5[g], share[g], dist[g]])
        .collect())
}

/// Labelled scenario for supervised training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScenario {
    pub configuration: String,
    pub scenario: AttackScenario,
    pub features: Vec<[f64; N_FEATURES]>,
    pub labels: Vec<bool>,
}

/// Logistic regression fitted by full-batch gradient descent on
/// standardised features with class-balanced weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
    pub weights: [f64; N_FEATURES],
    pub bias: f64,
}

pub const LOGISTIC_ITERS: usize = 400;
pub const LOGISTIC_RATE: f64 = 0.5;
pub const LOGISTIC_L2: f64 = 1e-3;

impl Logistic {
    pub fn fit(x: &[[f64; N_FEATURES]], y: &[bool], seed: u64) -> Result<Self> {
        let pos = y.iter().filter(|&&l| l).count();
        if x.len() != y.len() || pos == 0 || pos == y.len() {
            return Err(Error::Degenerate("training labels need both classes".into()));
        }
        let n = x.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut scale = [0.0; N_FEATURES];
        for f in 0..N_FEATURES {
            mean[f] = x.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / n;
            scale[f] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let z: Vec<[f64; N_FEATURES]> = x
            .iter()
            .map(|r| std::array::from_fn(|f| (r[f] - mean[f]) / scale[f]))
            .collect();
        let w_pos = n / (2.0 * pos as f64);
        let w_neg = n / (2.0 * (y.len() - pos) as f64);
        let mut r = rng::stream(seed, tag::CLASSIFIER, 0);
        let mut weights: [f64; N_FEATURES] = std::array::from_fn(|_| 0.01 * r.sample::<f64, _>(StandardNormal));
        let mut bias = 0.0;
        for _ in 0..LOGISTIC_ITERS {
            let mut gw = [0.0; N_FEATURES];
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(y) {
                let p = sigmoid(bias + dot(&weights, zi));
                let cw = if yi { w_pos } else { w_neg };
                let e = cw * (p - f64::from(u8::from(yi)));
                for f in 0..N_FEATURES {
                    gw[f] += e * zi[f];
                }
                gb += e;
            }
            for f in 0..N_FEATURES {
                weights[f] -= LOGISTIC_RATE * (gw[f] / n + LOGISTIC_L2 * weights[f]);
            }
            bias -= LOGISTIC_RATE * gb / n;
        }
        Ok(Self {
            mean,
            scale,
            weights,
            bias,
        })
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        let z: [f64; N_FEATURES] = std::array::from_fn(|f| (x[f] - self.mean[f]) / self.scale[f]);
        sigmoid(self.bias + dot(&self.weights, &z))
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn dot(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// D7: leave-one-configuration-out logistic regression. Returns one
/// detection result per scenario, each scored by the model trained on all
/// other configurations.
pub fn detector_d7_supervised(data: &[LabeledScenario], seed: u64) -> Result<Vec<DetectionResult>> {
    let mut configs: Vec<&str> = data.iter().map(|d| d.configuration.as_str()).collect();
    configs.sort_unstable();
    configs.dedup();
    if configs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two configurations".into()));
    }
    let mut out = Vec::with_capacity(data.len());
    for held in &configs {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for d in data.iter().filter(|d| d.configuration != *held) {
            x.extend_from_slice(&d.features);
            y.extend_from_slice(&d.labels);
        }
        let model = Logistic::fit(&x, &y, seed)?;
        for d in data.iter().filter(|d| d.configuration == *held) {
            let scores = d.features.iter().map(|f| model.predict(f)).collect();
            out.push(DetectionResult::new(Detector::D7, &d.scenario, scores)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub detector: Detector,
    pub n_scenarios: usize,
    pub pr_auc: f64,
    pub prevalence: f64,
    pub hit_at_1: f64,
    pub hit_at_5: f64,
}

/// Scenario-averaged metrics per detector, in first-seen detector order.
pub fn evaluate_detection(results: &[DetectionResult]) -> Vec<DetectionSummary> {
    let mut order: Vec<Detector> = Vec::new();
    for r in results {
        if !order.contains(&r.detector) {
            order.push(r.detector);
        }
    }
    order
        .into_iter()
        .map(|det| {
            let rs: Vec<&DetectionResult> = results.iter().filter(|r| r.detector == det).collect();
            let n = rs.len() as f64;
            DetectionSummary {
                detector: det,
                n_scenarios: rs.len(),
                pr_auc: rs.iter().map(|r| r.pr_auc).sum::<f64>() / n,
                prevalence: rs.iter().map(|r| r.prevalence).sum::<f64>() / n,
                hit_at_1: rs.iter().filter(|r| r.hit_at_1).count() as f64 / n,
                hit_at_5: rs.iter().filter(|r| r.hit_at_5).count() as f64 / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_station_grid, named_location, GridConfig, GridSpec};
    use crate::synth::synth_fields;
    use std::sync::Arc;

    fn setup() -> (Arc<GridSpec>, TargetSpec, StationGrid, Vec<FieldTensor>, Climatology) {
        let g = make_grid(&GridConfig::default()).unwrap();
        let t = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "t2m").unwrap();
        let st = make_station_grid(&g, 4).unwrap();
        let (f, c) = synth_fields(4, &g, 2).unwrap();
        (g, t, st, f, c)
    }

    fn scenario(kind: AttackKind, attackers: Vec<usize>, pct: f64, scope: Scope) -> AttackScenario {
        AttackScenario {
            id: "t".into(),
            kind,
            attackers,
            pct,
            scope,
            placement: Placement::Uniform,
            seed: 0,
        }
    }

    #[test]
    fn null_attacks_are_identity() {
        let (_, t, st, f, c) = setup();
        let sc = scenario(AttackKind::Inflate, vec![3, 40], 0.0, Scope::AllSurface);
        assert_eq!(apply_attack(&f[0], &sc, &c, &st, &t).unwrap(), f[0]);
        let sp = scenario(AttackKind::Spoof, vec![3], 0.0, Scope::AllSurface);
        assert_eq!(apply_attack(c.field(), &sp, &c, &st, &t).unwrap(), *c.field());
    }

    #[test]
    fn inflate_one_cell_one_variable() {
        let (_, t, st, f, c) = setup();
        let sc = scenario(AttackKind::Inflate, vec![50], 50.0, Scope::SingleTargetVar);
        let out = apply_attack(&f[0], &sc, &c, &st, &t).unwrap();
        let changed: Vec<usize> = (0..out.values().len())
            .filter(|&k| out.values()[k] != f[0].values()[k])
            .collect();
        assert_eq!(changed.len(), 1);
        let s = st.stations()[50];
        let old = f[0].get(0, s.lat_idx, s.lon_idx) - c.field().get(0, s.lat_idx, s.lon_idx);
        let new = out.get(0, s.lat_idx, s.lon_idx) - c.field().get(0, s.lat_idx, s.lon_idx);
        assert!((new - 1.5 * old).abs() < 1e-9);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let (_, t, st, f, c) = setup();
        let dup = scenario(AttackKind::Inflate, vec![1, 1], 10.0, Scope::AllSurface);
        assert!(apply_attack(&f[0], &dup, &c, &st, &t).is_err());
        let neg = scenario(AttackKind::Inflate, vec![1], -5.0, Scope::AllSurface);
        assert!(apply_attack(&f[0], &neg, &c, &st, &t).is_err());
    }

    #[test]
    fn placements_respect_distance_bands() {
        let (_, t, st, _, _) = setup();
        let d = st.distances_km(t.cell_latlon(st.grid()));
        for seed in 0..5 {
            let close = draw_attackers(&st, &t, 1, Placement::Close, seed).unwrap();
            assert!(close.iter().all(|&g| d[g] < CLOSE_KM));
            let mid = draw_attackers(&st, &t, 3, Placement::Mid, seed).unwrap();
            assert!(mid.iter().all(|&g| (CLOSE_KM..=MID_KM).contains(&d[g])));
        }
        assert!(draw_attackers(&st, &t, 200, Placement::Uniform, 0).is_err());
    }

    #[test]
    fn d4_and_d3_cases() {
        let b = [1.0, 2.0, 3.0];
        assert_eq!(detector_d4(&b, &b).unwrap(), vec![0.0; 3]);
        assert_eq!(detector_d3(&b, &b).unwrap(), vec![0.0; 3]);
        let s = detector_d4(&b, &[2.0, 2.0, 3.0]).unwrap();
        assert!((s[0] - 2f64.ln()).abs() < 1e-15 && s[1] == 0.0);
        let mut base: Vec<f64> = (0..60).map(|i| 100.0 - i as f64).collect();
        let mut att = base.clone();
        att[49] = 1000.0;
        let j = detector_d3(&base, &att).unwrap();
        assert_eq!(j[49], 49.0);
        base[0] = 0.0;
        assert!(detector_d4(&base, &att).unwrap()[0] == 0.0 || base[0] == 0.0);
    }

    #[test]
    fn d5_cases() {
        let (_, _, st, _, _) = setup();
        assert!(detector_d5(&vec![2.0; st.len()], &st)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let mut s = vec![2.0; st.len()];
        s[60] = 0.0;
        let d = detector_d5(&s, &st).unwrap();
        assert_eq!(top_k_indices(&d, 1), vec![60]);
    }

    #[test]
    fn u1_cases() {
        assert!(detector_u1(&[1.0; 9]).is_err());
        let mut s: Vec<f64> = (0..20).map(|i| 1.0 + (i % 4) as f64 * 0.1).collect();
        s[7] = 50.0;
        let z = detector_u1(&s).unwrap();
        assert_eq!(top_k_indices(&z, 1), vec![7]);
    }

    #[test]
    fn detectors_are_permutation_equivariant() {
        let (_, _, st, _, _) = setup();
        let n = st.len();
        let base: Vec<f64> = (0..n).map(|g| ((g * 31) % 17) as f64 + 1.0).collect();
        let att: Vec<f64> = (0..n).map(|g| base[g] * if g % 9 == 0 { 1.7 } else { 1.0 }).collect();
        let order: Vec<usize> = (0..n).rev().collect();
        let pst = st.permuted(&order).unwrap();
        let pb: Vec<f64> = order.iter().map(|&k| base[k]).collect();
        let pa: Vec<f64> = order.iter().map(|&k| att[k]).collect();
        let d3 = detector_d3(&base, &att).unwrap();
        let d4 = detector_d4(&base, &att).unwrap();
        let d5 = detector_d5(&att, &st).unwrap();
        let u1 = detector_u1(&att).unwrap();
        let (p3, p4, p5, pu) = (
            detector_d3(&pb, &pa).unwrap(),
            detector_d4(&pb, &pa).unwrap(),
            detector_d5(&pa, &pst).unwrap(),
            detector_u1(&pa).unwrap(),
        );
        for (i, &k) in order.iter().enumerate() {
            assert_eq!(p3[i], d3[k]);
            assert_eq!(p4[i], d4[k]);
            assert_eq!(p5[i], d5[k]);
            assert_eq!(pu[i], u1[k]);
        }
    }

    fn planted(config: &str, seed: u64, separable: bool) -> LabeledScenario {
        let mut r = rng::stream(seed, tag::SIMULATION, 3);
        let n = 40;
        let attackers = vec![(seed as usize * 7) % n, (seed as usize * 7 + 13) % n];
        let sc = AttackScenario {
            id: format!("{config}-{seed}"),
            kind: AttackKind::Inflate,
            attackers: attackers.clone(),
            pct: 50.0,
            scope: Scope::AllSurface,
            placement: Placement::Uniform,
            seed,
        };
        let labels = sc.labels(n);
        let features = (0..n)
            .map(|g| {
                let mut f: [f64; N_FEATURES] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
                if separable && labels[g] {
                    f[1] += 5.0;
                }
                f
            })
            .collect();
        LabeledScenario {
            configuration: config.into(),
            scenario: sc,
            features,
            labels,
        }
    }

    #[test]
    fn d7_separable_and_deterministic() {
        let data: Vec<LabeledScenario> = (0..12)
            .map(|s| planted(["a", "b", "c"][s as usize % 3], s, true))
            .collect();
        let res = detector_d7_supervised(&data, 9).unwrap();
        assert_eq!(res.len(), 12);
        assert!(res.iter().all(|r| r.pr_auc == 1.0));
        assert_eq!(res, detector_d7_supervised(&data, 9).unwrap());
        let one: Vec<LabeledScenario> = data.iter().filter(|d| d.configuration == "a").cloned().collect();
        assert!(detector_d7_supervised(&one, 9).is_err());
    }

    #[test]
    fn evaluation_matches_naive_loop() {
        let (_, _, st, _, _) = setup();
        let mut results = Vec::new();
        for s in 0..6 {
            let sc = scenario(AttackKind::Inflate, vec![s * 3], 10.0, Scope::AllSurface);
            let scores: Vec<f64> = (0..st.len()).map(|g| ((g * 17 + s) % 23) as f64).collect();
            results.push(DetectionResult::new(Detector::D4, &sc, scores).unwrap());
        }
        let summary = evaluate_detection(&results);
        assert_eq!(summary.len(), 1);
        let naive: f64 = results.iter().map(|r| r.pr_auc).sum::<f64>() / 6.0;
        assert!((summary[0].pr_auc - naive).abs() < 1e-15);
    }
}
