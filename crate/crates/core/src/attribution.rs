//! Attribution proxies: Integrated Gradients, Gradient x Input and Vanilla
//! Gradients, their baselines, and aggregation to variables and stations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Climatology, FieldTensor, StationGrid};
use crate::model::ForecastModel;

/// Default number of IG quadrature intervals.
pub const DEFAULT_STEPS: usize = 50;
/// IG quadrature intervals in fast mode.
pub const FAST_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ig,
    Gti,
    Vg,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ig, Method::Gti, Method::Vg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ig => "IG",
            Method::Gti => "GTI",
            Method::Vg => "VG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Climatology,
    Zero,
    Persistence,
    /// Caller-supplied reference field.
    Custom,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Climatology => "climatology",
            BaselineKind::Zero => "zero",
            BaselineKind::Persistence => "persistence",
            BaselineKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub method: Method,
    pub baseline: BaselineKind,
    /// Quadrature intervals; only used by IG.
    pub steps: usize,
}

impl AttributionConfig {
    pub fn new(method: Method, baseline: BaselineKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("IG needs at least one step".into()));
        }
        Ok(Self {
            method,
            baseline,
            steps,
        })
    }

    pub fn ig(steps: usize) -> Self {
        Self {
            method: Method::Ig,
            baseline: BaselineKind::Climatology,
            steps: steps.max(1),
        }
    }

    pub fn gti() -> Self {
        Self {
            method: Method::Gti,
            baseline: BaselineKind::Climatology,
            steps: 1,
        }
    }

    pub fn vg() -> Self {
        Self {
            method: Method::Vg,
            baseline: BaselineKind::Climatology,
            steps: 1,
        }
    }

    pub fn label(&self) -> String {
        match self.method {
            Method::Ig => format!("IG-K{}-{}", self.steps, self.baseline.name()),
            Method::Gti => format!("GTI-{}", self.baseline.name()),
            Method::Vg => "VG".to_string(),
        }
    }
}

/// Where an attribution map came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub baseline: BaselineKind,
    pub steps: usize,
    pub timestamp: i64,
    pub model_id: String,
    pub seed: u64,
}

/// Signed per-coordinate attribution scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    scores: FieldTensor,
    provenance: Provenance,
}

impl AttributionMap {
    pub fn new(scores: FieldTensor, provenance: Provenance) -> Result<Self> {
        if !scores.is_finite() {
            return Err(Error::Degenerate("attribution map has non-finite scores".into()));
        }
        Ok(Self { scores, provenance })
    }

    pub fn scores(&self) -> &FieldTensor {
        &self.scores
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sum(&self) -> f64 {
        crate::model::compensated_sum(self.scores.values().iter().copied())
    }
}

fn provenance(model: &ForecastModel, method: Method, baseline: BaselineKind, steps: usize, ts: i64) -> Provenance {
    Provenance {
        method,
        baseline,
        steps,
        timestamp: ts,
        model_id: model.id(),
        seed: model.config().seed,
    }
}

/// Trapezoid-rule Integrated Gradients with `steps` intervals
/// (`steps + 1` gradient evaluations).
pub fn integrated_gradients(
    model: &ForecastModel,
    x: &FieldTensor,
    baseline: &FieldTensor,
    steps: usize,
) -> Result<AttributionMap> {
    integrated_gradients_with(model, x, baseline, BaselineKind::Custom, steps)
}

fn integrated_gradients_with(
    model: &ForecastModel,
    x: &FieldTensor,
    baseline: &FieldTensor,
    kind: BaselineKind,
    steps: usize,
) -> Result<AttributionMap> {
    if steps == 0 {
        return Err(Error::InvalidArgument("IG needs at least one step".into()));
    }
    x.check_same_grid(baseline)?;
    let mut acc = vec![0.0; x.values().len()];
    for k in 0..=steps {
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let point = x.lerp_from(baseline, k as f64 / steps as f64)?;
        let g = model.gradient(&point)?;
        for (a, gi) in acc.iter_mut().zip(g.values()) {
            *a += w * gi;
        }
    }
    let k = steps as f64;
    let values = acc
        .iter()
        .zip(x.values().iter().zip(baseline.values()))
        .map(|(a, (xi, bi))| (xi - bi) * (a / k))
        .collect();
    let scores = FieldTensor::from_values(x.grid(), values, x.timestamp())?;
    AttributionMap::new(scores, provenance(model, Method::Ig, kind, steps, x.timestamp()))
}

/// `(x - baseline) * grad F(x)` from a single backward pass.
pub fn gradient_times_input(model: &ForecastModel, x: &FieldTensor, baseline: &FieldTensor) -> Result<AttributionMap> {
    gradient_times_input_with(model, x, baseline, BaselineKind::Custom)
}

fn gradient_times_input_with(
    model: &ForecastModel,
    x: &FieldTensor,
    baseline: &FieldTensor,
    kind: BaselineKind,
) -> Result<AttributionMap> {
    x.check_same_grid(baseline)?;
    let g = model.gradient(x)?;
    let values = g
        .values()
        .iter()
        .zip(x.values().iter().zip(baseline.values()))
        .map(|(gi, (xi, bi))| (xi - bi) * gi)
        .collect();
    let scores = FieldTensor::from_values(x.grid(), values, x.timestamp())?;
    AttributionMap::new(scores, provenance(model, Method::Gti, kind, 1, x.timestamp()))
}

/// Raw input gradient.
pub fn vanilla_gradient(model: &ForecastModel, x: &FieldTensor) -> Result<AttributionMap> {
    let g = model.gradient(x)?.with_timestamp(x.timestamp());
    AttributionMap::new(g, provenance(model, Method::Vg, BaselineKind::Custom, 1, x.timestamp()))
}

/// The field preceding `t`.
pub fn persistence_baseline(fields: &[FieldTensor], t: usize) -> Result<&FieldTensor> {
    if t == 0 {
        return Err(Error::InvalidArgument("timestamp 0 has no persistence baseline".into()));
    }
    fields
        .get(t - 1)
        .ok_or_else(|| Error::InvalidArgument(format!("timestamp {t} out of range")))
}

/// Reference field for `fields[t]` under `kind`.
pub fn baseline_field(kind: BaselineKind, fields: &[FieldTensor], t: usize, clim: &Climatology) -> Result<FieldTensor> {
    match kind {
        BaselineKind::Climatology => Ok(clim.field().clone()),
        BaselineKind::Zero => Ok(FieldTensor::zeros(clim.grid())),
        BaselineKind::Persistence => persistence_baseline(fields, t).cloned(),
        BaselineKind::Custom => Err(Error::InvalidArgument(
            "custom baselines must be passed explicitly".into(),
        )),
    }
}

/// Attribution of `fields[t]` under `config`.
pub fn attribute(
    model: &ForecastModel,
    config: &AttributionConfig,
    fields: &[FieldTensor],
    t: usize,
    clim: &Climatology,
) -> Result<AttributionMap> {
    let x = fields
        .get(t)
        .ok_or_else(|| Error::InvalidArgument(format!("timestamp {t} out of range")))?;
    match config.method {
        Method::Vg => vanilla_gradient(model, x),
        Method::Gti => {
            let b = baseline_field(config.baseline, fields, t, clim)?;
            gradient_times_input_with(model, x, &b, config.baseline)
        }
        Method::Ig => {
            let b = baseline_field(config.baseline, fields, t, clim)?;
            integrated_gradients_with(model, x, &b, config.baseline, config.steps)
        }
    }
}

/// Attributions of the given timestamps, computed in parallel.
pub fn attribute_all(
    model: &ForecastModel,
    config: &AttributionConfig,
    fields: &[FieldTensor],
    timestamps: &[usize],
    clim: &Climatology,
) -> Result<Vec<AttributionMap>> {
    timestamps
        .par_iter()
        .map(|&t| attribute(model, config, fields, t, clim))
        .collect()
}

/// `I_v = sum_l |A_{v,l}|`.
pub fn variable_importance(attr: &AttributionMap) -> Vec<f64> {
    let s = attr.scores();
    (0..s.grid().n_vars())
        .map(|v| s.variable(v).iter().map(|a| a.abs()).sum())
        .collect()
}

/// `S_g = sum_v |A_{v,g}|` at each station cell.
pub fn spatial_importance(attr: &AttributionMap, stations: &StationGrid) -> Result<Vec<f64>> {
    station_sums(attr.scores(), stations, f64::abs)
}

/// Signed station sums `sum_v A_{v,g}`.
pub fn spatial_signed(attr: &AttributionMap, stations: &StationGrid) -> Result<Vec<f64>> {
    station_sums(attr.scores(), stations, |a| a)
}

fn station_sums(f: &FieldTensor, stations: &StationGrid, op: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    if f.grid().shape() != stations.grid().shape() {
        return Err(Error::ShapeMismatch {
            expected: f.grid().shape(),
            got: stations.grid().shape(),
        });
    }
    Ok(stations
        .stations()
        .iter()
        .map(|s| (0..f.grid().n_vars()).map(|v| op(f.get(v, s.lat_idx, s.lon_idx))).sum())
        .collect())
}

/// Unweighted elementwise mean.
pub fn time_average(maps: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list".into()))?;
    let n = first.len();
    if maps.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidArgument("vectors differ in length".into()));
    }
    let mut out = vec![0.0; n];
    for m in maps {
        for (o, v) in out.iter_mut().zip(m) {
            *o += v;
        }
    }
    let t = maps.len() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    Ok(out)
}
