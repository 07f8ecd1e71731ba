//! Reference utilities from counterfactual model evaluation.
//!
//! A utility is the increase in absolute target error caused by replacing
//! part of the input: positive means the replaced data helped the forecast.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Climatology, FieldTensor, StationGrid};
use crate::model::{ForecastModel, ForwardCache, Rect};
use crate::rng::{self, tag};

/// Guard below which a sum of utilities is treated as zero.
pub const RATIO_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    MeanReplace,
    ScaleBias,
    AdditiveNoise,
}

impl PerturbationMode {
    pub const ALL: [PerturbationMode; 3] = [
        PerturbationMode::MeanReplace,
        PerturbationMode::ScaleBias,
        PerturbationMode::AdditiveNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationMode::MeanReplace => "mean_replace",
            PerturbationMode::ScaleBias => "scale_bias",
            PerturbationMode::AdditiveNoise => "additive_noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    /// Odd patch width in cells.
    pub patch: usize,
    pub magnitude: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbationMode, patch: usize, magnitude: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            mode,
            patch,
            magnitude,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mean_replace(patch: usize) -> Self {
        Self {
            mode: PerturbationMode::MeanReplace,
            patch,
            magnitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be odd, got {}",
                self.patch
            )));
        }
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(Error::InvalidArgument("magnitude must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Per-variable utilities of global climatology replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalUtilityVector {
    pub timestamp: i64,
    pub utilities: Vec<f64>,
}

/// Per-station utilities of local patch perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialUtilityMap {
    pub timestamp: i64,
    pub spec: PerturbationSpec,
    pub signed: Vec<f64>,
    pub abs: Vec<f64>,
    /// Cells actually perturbed per station (fewer at grid edges).
    pub cells: Vec<usize>,
}

/// `U_v = |F(x with v <- clim) - y*| - |F(x) - y*|` for every variable.
pub fn global_ablation(
    model: &ForecastModel,
    x: &FieldTensor,
    y_star: f64,
    clim: &Climatology,
) -> Result<GlobalUtilityVector> {
    x.check_same_grid(clim.field())?;
    let base = (model.forward(x)? - y_star).abs();
    let utilities = (0..x.grid().n_vars())
        .map(|v| {
            let mut xv = x.clone();
            xv.variable_mut(v).copy_from_slice(clim.field().variable(v));
            Ok((model.forward(&xv)? - y_star).abs() - base)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalUtilityVector {
        timestamp: x.timestamp(),
        utilities,
    })
}

/// Per-variable standard deviation over all cells of the given fields.
pub fn variable_std(fields: &[FieldTensor]) -> Result<Vec<f64>> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("no fields".into()))?;
    let n_vars = first.grid().n_vars();
    (0..n_vars)
        .map(|v| {
            let mut n = 0.0;
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for f in fields {
                first.check_same_grid(f)?;
                for &x in f.variable(v) {
                    n += 1.0;
                    let d = x - mean;
                    mean += d / n;
                    m2 += d * (x - mean);
                }
            }
            Ok((m2 / n).sqrt())
        })
        .collect()
}

/// Patch of width `patch` centred on station `position`, clipped to the grid.
pub fn patch_rect(stations: &StationGrid, position: usize, patch: usize) -> Result<Rect> {
    let s = stations
        .get(position)
        .ok_or_else(|| Error::InvalidStation(format!("no station at position {position}")))?;
    let g = stations.grid();
    Ok(Rect::around(s.lat_idx, s.lon_idx, patch / 2, g.n_lat(), g.n_lon()))
}

fn perturb_rect(
    out: &mut FieldTensor,
    x: &FieldTensor,
    rect: Rect,
    spec: &PerturbationSpec,
    clim: &Climatology,
    var_std: &[f64],
    noise_index: u64,
) {
    let c = clim.field();
    let mut noise =
        (spec.mode == PerturbationMode::AdditiveNoise).then(|| rng::stream(spec.seed, tag::PATCH_NOISE, noise_index));
    for v in 0..x.grid().n_vars() {
        for i in rect.i0..rect.i1 {
            for j in rect.j0..rect.j1 {
                let xv = x.get(v, i, j);
                let cv = c.get(v, i, j);
                let new = match spec.mode {
                    PerturbationMode::MeanReplace => cv,
                    PerturbationMode::ScaleBias => xv + spec.magnitude * (xv - cv),
                    PerturbationMode::AdditiveNoise => {
                        let z: f64 = noise.as_mut().expect("noise stream").sample(StandardNormal);
                        xv + spec.magnitude * var_std[v] * z
                    }
                };
                out.set(v, i, j, new);
            }
        }
    }
}

fn noise_index(x: &FieldTensor, station_id: usize) -> u64 {
    rng::mix(&[x.timestamp() as u64, station_id as u64])
}

/// Perturb the patch around station `position`. All variables are affected;
/// scale-bias writes `clim + (1 + m)(x - clim)` in the form `x + m(x - clim)`.
/// `var_std` is only read in additive-noise mode.
pub fn perturb_patch(
    x: &FieldTensor,
    stations: &StationGrid,
    position: usize,
    spec: &PerturbationSpec,
    clim: &Climatology,
    var_std: &[f64],
) -> Result<FieldTensor> {
    spec.validate()?;
    x.check_same_grid(clim.field())?;
    if spec.mode == PerturbationMode::AdditiveNoise && var_std.len() != x.grid().n_vars() {
        return Err(Error::InvalidArgument("one noise std per variable required".into()));
    }
    let rect = patch_rect(stations, position, spec.patch)?;
    let id = stations.stations()[position].id;
    let mut out = x.clone();
    perturb_rect(&mut out, x, rect, spec, clim, var_std, noise_index(x, id));
    Ok(out)
}

/// `U_g = |F(x perturbed at g) - y*| - |F(x) - y*|` for every station.
pub fn spatial_utility(
    model: &ForecastModel,
    x: &FieldTensor,
    y_star: f64,
    stations: &StationGrid,
    spec: &PerturbationSpec,
    clim: &Climatology,
    var_std: &[f64],
) -> Result<SpatialUtilityMap> {
    spec.validate()?;
    let cache: ForwardCache = model.forward_cached(x)?;
    let base = (cache.output() - y_star).abs();
    let signed = (0..stations.len())
        .into_par_iter()
        .map(|g| {
            let xp = perturb_patch(x, stations, g, spec, clim, var_std)?;
            Ok((model.forward_from(&cache, &xp)? - y_star).abs() - base)
        })
        .collect::<Result<Vec<f64>>>()?;
    let cells = (0..stations.len())
        .map(|g| patch_rect(stations, g, spec.patch).map(|r| r.area()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialUtilityMap {
        timestamp: x.timestamp(),
        spec: *spec,
        abs: signed.iter().map(|u| u.abs()).collect(),
        signed,
        cells,
    })
}

/// Joint perturbation of a station set against its individual effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAblation {
    pub joint: f64,
    pub individual: Vec<f64>,
    pub sum: f64,
    /// `joint / sum`, absent when `|sum| < RATIO_EPS`.
    pub ratio: Option<f64>,
    pub overlapping: bool,
}

/// Perturb all patches of `set` at once. Cells covered by several patches
/// are perturbed once, from the unperturbed value.
#[allow(clippy::too_many_arguments)]
pub fn joint_ablation(
    model: &ForecastModel,
    x: &FieldTensor,
    y_star: f64,
    stations: &StationGrid,
    set: &[usize],
    spec: &PerturbationSpec,
    clim: &Climatology,
    var_std: &[f64],
) -> Result<JointAblation> {
    spec.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty station set".into()));
    }
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate station in set".into()));
    }
    let base = (model.forward(x)? - y_star).abs();
    let mut joint_x = x.clone();
    let mut rects = Vec::with_capacity(set.len());
    let mut individual = Vec::with_capacity(set.len());
    for &g in set {
        let rect = patch_rect(stations, g, spec.patch)?;
        let id = stations.stations()[g].id;
        perturb_rect(&mut joint_x, x, rect, spec, clim, var_std, noise_index(x, id));
        let single = perturb_patch(x, stations, g, spec, clim, var_std)?;
        individual.push((model.forward(&single)? - y_star).abs() - base);
        rects.push(rect);
    }
    let overlapping = rects
        .iter()
        .enumerate()
        .any(|(a, ra)| rects[a + 1..].iter().any(|rb| ra.intersect(rb).is_some()));
    let joint = (model.forward(&joint_x)? - y_star).abs() - base;
    let sum: f64 = individual.iter().sum();
    let ratio = (sum.abs() >= RATIO_EPS).then(|| joint / sum);
    Ok(JointAblation {
        joint,
        individual,
        sum,
        ratio,
        overlapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_station_grid, named_location, GridConfig, GridSpec, TargetSpec};
    use crate::model::{make_desk_model, make_linear_model};
    use crate::synth::synth_fields;
    use std::sync::Arc;

    struct Setup {
        g: Arc<GridSpec>,
        t: TargetSpec,
        f: Vec<FieldTensor>,
        c: Climatology,
        st: StationGrid,
    }

    fn setup() -> Setup {
        let g = make_grid(&GridConfig::with_dims(16, 20, 3)).unwrap();
        let t = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "t2m").unwrap();
        let (f, c) = synth_fields(3, &g, 4).unwrap();
        let st = make_station_grid(&g, 2).unwrap();
        Setup { g, t, f, c, st }
    }

    #[test]
    fn ablation_at_climatology_is_zero() {
        let s = setup();
        let m = make_desk_model(1, &s.g, &s.t, 2).unwrap();
        let x = s.c.field().clone();
        let y = m.forward(&x).unwrap() + 0.3;
        assert!(global_ablation(&m, &x, y, &s.c)
            .unwrap()
            .utilities
            .iter()
            .all(|&u| u == 0.0));
        let spec = PerturbationSpec::mean_replace(3);
        let u = spatial_utility(&m, &x, y, &s.st, &spec, &s.c, &[]).unwrap();
        assert!(u.signed.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_global_closed_form() {
        let s = setup();
        let m = make_linear_model(2, &s.g, &s.t).unwrap();
        let w = m.gradient(&s.f[0]).unwrap();
        let x = &s.f[0];
        let y = 280.0;
        let u = global_ablation(&m, x, y, &s.c).unwrap();
        let n = s.g.n_cells();
        let full: f64 = w.values().iter().zip(x.values()).map(|(a, b)| a * b).sum();
        for v in 0..3 {
            let mut xs = x.values().to_vec();
            xs[v * n..(v + 1) * n].copy_from_slice(s.c.field().variable(v));
            let abl: f64 = w.values().iter().zip(&xs).map(|(a, b)| a * b).sum();
            let expect = (abl - y).abs() - (full - y).abs();
            assert!((u.utilities[v] - expect).abs() <= 1e-12 * full.abs().max(1.0));
        }
    }

    #[test]
    fn masked_variable_has_zero_global_utility() {
        let s = setup();
        let m = make_desk_model(1, &s.g, &s.t, 2).unwrap().with_input_masked(2).unwrap();
        let u = global_ablation(&m, &s.f[0], 283.0, &s.c).unwrap();
        assert_eq!(u.utilities[2], 0.0);
    }

    #[test]
    fn identity_perturbations() {
        let s = setup();
        let clim_x = s.c.field().clone();
        let mr = PerturbationSpec::mean_replace(5);
        assert_eq!(perturb_patch(&clim_x, &s.st, 7, &mr, &s.c, &[]).unwrap(), clim_x);
        let sb = PerturbationSpec::new(PerturbationMode::ScaleBias, 3, 0.0, 0).unwrap();
        assert_eq!(perturb_patch(&s.f[0], &s.st, 7, &sb, &s.c, &[]).unwrap(), s.f[0]);
        let nz = PerturbationSpec::new(PerturbationMode::AdditiveNoise, 3, 0.0, 4).unwrap();
        assert_eq!(perturb_patch(&s.f[0], &s.st, 7, &nz, &s.c, &[1.0; 3]).unwrap(), s.f[0]);
    }

    #[test]
    fn single_cell_patch_changes_one_cell_per_variable() {
        let s = setup();
        let spec = PerturbationSpec::new(PerturbationMode::ScaleBias, 1, 0.1, 0).unwrap();
        let p = perturb_patch(&s.f[1], &s.st, 12, &spec, &s.c, &[]).unwrap();
        let n = s.g.n_cells();
        for v in 0..3 {
            let changed = (0..n)
                .filter(|&k| p.values()[v * n + k] != s.f[1].values()[v * n + k])
                .count();
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn edge_patches_are_clipped() {
        let s = setup();
        assert_eq!(patch_rect(&s.st, 0, 5).unwrap().area(), 9);
        assert!(patch_rect(&s.st, 10_000, 1).is_err());
        assert!(PerturbationSpec::new(PerturbationMode::MeanReplace, 2, 0.0, 0).is_err());
    }

    #[test]
    fn singleton_joint_ratio_is_one() {
        let s = setup();
        let m = make_desk_model(1, &s.g, &s.t, 2).unwrap();
        let spec = PerturbationSpec::mean_replace(3);
        let y = m.forward(&s.f[0]).unwrap() + 1.0;
        let target_station =
            s.st.stations()
                .iter()
                .position(|st| st.lat_idx.abs_diff(s.t.lat_idx) <= 1 && st.lon_idx.abs_diff(s.t.lon_idx) <= 1)
                .unwrap();
        let j = joint_ablation(&m, &s.f[0], y, &s.st, &[target_station], &spec, &s.c, &[]).unwrap();
        assert_eq!(j.ratio, Some(1.0));
        assert!(!j.overlapping);
    }

    #[test]
    fn zero_sum_ratio_is_flagged() {
        let s = setup();
        let m = make_desk_model(1, &s.g, &s.t, 2).unwrap();
        let x = s.c.field().clone();
        let spec = PerturbationSpec::mean_replace(1);
        let j = joint_ablation(&m, &x, 0.0, &s.st, &[0, 1], &spec, &s.c, &[]).unwrap();
        assert_eq!(j.ratio, None);
    }
}
