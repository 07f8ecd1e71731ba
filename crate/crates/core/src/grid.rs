//! Regular lat/lon grids, multi-variable fields, candidate station grids and
//! forecast targets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// One input variable with its nominal units.
///
/// `mean`/`std` describe the typical magnitude of the variable; the field
/// generator draws around them and the desk models normalise inputs with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, mean: f64, std: f64) -> Self {
        Self {
            name: name.into(),
            mean,
            std,
        }
    }
}

/// Surface variables of the default desk grid, in deliberately heterogeneous units.
pub fn desk_variables() -> Vec<VariableSpec> {
    vec![
        VariableSpec::new("t2m", 283.0, 5.0),
        VariableSpec::new("u10m", 0.0, 4.0),
        VariableSpec::new("v10m", 0.0, 4.0),
        VariableSpec::new("msl", 101_325.0, 1_200.0),
        VariableSpec::new("tcwv", 18.0, 7.0),
        VariableSpec::new("z500", 55_500.0, 900.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub variables: Vec<VariableSpec>,
}

impl Default for GridConfig {
    /// 36 x 50 cells over 35-70N, 10W-40E with six variables.
    fn default() -> Self {
        Self {
            n_lat: 36,
            n_lon: 50,
            lat_min: 35.0,
            lat_max: 70.0,
            lon_min: -10.0,
            lon_max: 40.0,
            variables: desk_variables(),
        }
    }
}

impl GridConfig {
    /// A grid over the default domain with the given size; variables are the
    /// first `n_vars` desk variables (cycled with a numeric suffix beyond six).
    pub fn with_dims(n_lat: usize, n_lon: usize, n_vars: usize) -> Self {
        let base = desk_variables();
        let variables = (0..n_vars)
            .map(|k| {
                let v = &base[k % base.len()];
                if k < base.len() {
                    v.clone()
                } else {
                    VariableSpec::new(format!("{}_{}", v.name, k / base.len()), v.mean, v.std)
                }
            })
            .collect();
        Self {
            n_lat,
            n_lon,
            variables,
            ..Self::default()
        }
    }
}

/// Immutable grid description. Cell centres include both domain edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_lat: usize,
    n_lon: usize,
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
    variables: Vec<VariableSpec>,
}

pub fn make_grid(config: &GridConfig) -> Result<Arc<GridSpec>> {
    GridSpec::new(config).map(Arc::new)
}

impl GridSpec {
    pub fn new(config: &GridConfig) -> Result<Self> {
        if config.n_lat < 4 || config.n_lon < 4 {
            return Err(Error::InvalidDimension(format!(
                "grid must be at least 4x4, got {}x{}",
                config.n_lat, config.n_lon
            )));
        }
        if config.variables.is_empty() {
            return Err(Error::InvalidDimension("grid needs at least one variable".into()));
        }
        if !(config.lat_max > config.lat_min) || !(config.lon_max > config.lon_min) {
            return Err(Error::InvalidArgument("grid bounds must be increasing".into()));
        }
        if config.lat_min < -90.0 || config.lat_max > 90.0 {
            return Err(Error::InvalidArgument("latitude out of range".into()));
        }
        for (k, v) in config.variables.iter().enumerate() {
            if config.variables[..k].iter().any(|w| w.name == v.name) {
                return Err(Error::InvalidArgument(format!("duplicate variable {}", v.name)));
            }
            if !(v.std > 0.0) || !v.mean.is_finite() {
                return Err(Error::InvalidArgument(format!("variable {} needs std > 0", v.name)));
            }
        }
        Ok(Self {
            n_lat: config.n_lat,
            n_lon: config.n_lon,
            lat_min: config.lat_min,
            lat_max: config.lat_max,
            lon_min: config.lon_min,
            lon_max: config.lon_max,
            variables: config.variables.clone(),
        })
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Number of values in a field on this grid.
    pub fn len(&self) -> usize {
        self.n_vars() * self.n_cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_vars(), self.n_lat, self.n_lon)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.lat_min, self.lat_max, self.lon_min, self.lon_max)
    }

    pub fn dlat(&self) -> f64 {
        (self.lat_max - self.lat_min) / (self.n_lat - 1) as f64
    }

    pub fn dlon(&self) -> f64 {
        (self.lon_max - self.lon_min) / (self.n_lon - 1) as f64
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat_min + i as f64 * self.dlat()
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon_min + j as f64 * self.dlon()
    }

    pub fn cell_latlon(&self, i: usize, j: usize) -> LatLon {
        LatLon::new(self.lat(i), self.lon(j))
    }

    /// Flat offset of `(variable, lat index, lon index)`.
    #[inline]
    pub fn index(&self, v: usize, i: usize, j: usize) -> usize {
        (v * self.n_lat + i) * self.n_lon + j
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.n_lon + j
    }

    /// Nearest cell to a coordinate, or `None` when it lies outside the grid
    /// by more than half a cell.
    pub fn nearest_cell(&self, p: LatLon) -> Option<(usize, usize)> {
        let fi = (p.lat - self.lat_min) / self.dlat();
        let fj = (p.lon - self.lon_min) / self.dlon();
        let max_i = (self.n_lat - 1) as f64;
        let max_j = (self.n_lon - 1) as f64;
        if fi < -0.5 || fj < -0.5 || fi > max_i + 0.5 || fj > max_j + 0.5 {
            return None;
        }
        Some((
            fi.round().clamp(0.0, max_i) as usize,
            fj.round().clamp(0.0, max_j) as usize,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in kilometres (haversine formula).
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Gridded multi-variable state indexed `(variable, lat, lon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    grid: Arc<GridSpec>,
    values: Vec<f64>,
    timestamp: i64,
}

impl FieldTensor {
    pub fn zeros(grid: &Arc<GridSpec>) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.len()],
            timestamp: 0,
        }
    }

    pub fn from_values(grid: &Arc<GridSpec>, values: Vec<f64>, timestamp: i64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.shape(),
                got: (values.len(), 1, 1),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            values,
            timestamp,
        })
    }

    /// A field with variable `v` set to `per_var[v]` everywhere.
    pub fn constant_per_variable(grid: &Arc<GridSpec>, per_var: &[f64]) -> Result<Self> {
        if per_var.len() != grid.n_vars() {
            return Err(Error::InvalidArgument("one value per variable required".into()));
        }
        let n = grid.n_cells();
        let values = per_var.iter().flat_map(|&c| std::iter::repeat_n(c, n)).collect();
        Self::from_values(grid, values, 0)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.grid.shape()
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, v: usize, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(v, i, j)]
    }

    #[inline]
    pub fn set(&mut self, v: usize, i: usize, j: usize, value: f64) {
        let k = self.grid.index(v, i, j);
        self.values[k] = value;
    }

    /// Values of one variable, row-major `(lat, lon)`.
    pub fn variable(&self, v: usize) -> &[f64] {
        let n = self.grid.n_cells();
        &self.values[v * n..(v + 1) * n]
    }

    pub fn variable_mut(&mut self, v: usize) -> &mut [f64] {
        let n = self.grid.n_cells();
        &mut self.values[v * n..(v + 1) * n]
    }

    pub fn check_same_grid(&self, other: &FieldTensor) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            })
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &FieldTensor) -> Result<FieldTensor> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(FieldTensor {
            grid: Arc::clone(&self.grid),
            values,
            timestamp: self.timestamp,
        })
    }

    /// `base + alpha * (self - base)`, the straight path from `base` to `self`.
    pub fn lerp_from(&self, base: &FieldTensor, alpha: f64) -> Result<FieldTensor> {
        self.check_same_grid(base)?;
        let values = base
            .values
            .iter()
            .zip(&self.values)
            .map(|(b, x)| b + alpha * (x - b))
            .collect();
        Ok(FieldTensor {
            grid: Arc::clone(&self.grid),
            values,
            timestamp: self.timestamp,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-variable climatological mean field.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology(FieldTensor);

impl Climatology {
    pub fn new(field: FieldTensor) -> Result<Self> {
        if !field.is_finite() {
            return Err(Error::Degenerate("climatology must be finite".into()));
        }
        Ok(Self(field))
    }

    pub fn field(&self) -> &FieldTensor {
        &self.0
    }

    pub fn into_field(self) -> FieldTensor {
        self.0
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.0.grid()
    }
}

impl AsRef<FieldTensor> for Climatology {
    fn as_ref(&self) -> &FieldTensor {
        &self.0
    }
}

/// A candidate sensor location at a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub id: usize,
    pub lat_idx: usize,
    pub lon_idx: usize,
    /// Position in the station lattice, used for spatial blocking.
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationGrid {
    grid: Arc<GridSpec>,
    stations: Vec<Station>,
}

/// Stations at every `stride`-th cell in both axes, row-major ids.
pub fn make_station_grid(grid: &Arc<GridSpec>, stride: usize) -> Result<StationGrid> {
    if stride == 0 {
        return Err(Error::InvalidArgument("station stride must be >= 1".into()));
    }
    if stride > grid.n_lat() || stride > grid.n_lon() {
        return Err(Error::InvalidArgument(format!(
            "station stride {stride} exceeds grid {}x{}",
            grid.n_lat(),
            grid.n_lon()
        )));
    }
    let mut stations = Vec::new();
    for (row, i) in (0..grid.n_lat()).step_by(stride).enumerate() {
        for (col, j) in (0..grid.n_lon()).step_by(stride).enumerate() {
            stations.push(Station {
                id: stations.len(),
                lat_idx: i,
                lon_idx: j,
                row,
                col,
            });
        }
    }
    StationGrid::new(grid, stations)
}

impl StationGrid {
    pub fn new(grid: &Arc<GridSpec>, stations: Vec<Station>) -> Result<Self> {
        let mut seen_ids = std::collections::HashSet::new();
        let mut seen_cells = std::collections::HashSet::new();
        for s in &stations {
            if s.lat_idx >= grid.n_lat() || s.lon_idx >= grid.n_lon() {
                return Err(Error::InvalidStation(format!("station {} outside grid", s.id)));
            }
            if !seen_ids.insert(s.id) {
                return Err(Error::InvalidStation(format!("duplicate station id {}", s.id)));
            }
            if !seen_cells.insert((s.lat_idx, s.lon_idx)) {
                return Err(Error::InvalidStation(format!(
                    "two stations share cell ({}, {})",
                    s.lat_idx, s.lon_idx
                )));
            }
        }
        Ok(Self {
            grid: Arc::clone(grid),
            stations,
        })
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn get(&self, position: usize) -> Option<&Station> {
        self.stations.get(position)
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    pub fn latlon(&self, position: usize) -> LatLon {
        let s = &self.stations[position];
        self.grid.cell_latlon(s.lat_idx, s.lon_idx)
    }

    pub fn distance_km(&self, position: usize, to: LatLon) -> f64 {
        haversine(self.latlon(position), to)
    }

    pub fn distances_km(&self, to: LatLon) -> Vec<f64> {
        (0..self.len()).map(|g| self.distance_km(g, to)).collect()
    }

    /// Partition of station positions into `size x size` lattice neighbourhoods.
    pub fn neighbourhood_blocks(&self, size: usize) -> Vec<Vec<usize>> {
        let size = size.max(1);
        let mut keys: Vec<(usize, usize)> = Vec::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (pos, s) in self.stations.iter().enumerate() {
            let key = (s.row / size, s.col / size);
            match keys.iter().position(|k| *k == key) {
                Some(b) => blocks[b].push(pos),
                None => {
                    keys.push(key);
                    blocks.push(vec![pos]);
                }
            }
        }
        blocks
    }

    /// The same stations listed in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        Self::new(&self.grid, order.iter().map(|&k| self.stations[k]).collect())
    }
}

/// A forecast target: a location snapped to its nearest cell plus the
/// predicted variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub location: LatLon,
    pub lat_idx: usize,
    pub lon_idx: usize,
    pub variable: usize,
    pub variable_name: String,
}

impl TargetSpec {
    pub fn new(grid: &GridSpec, name: impl Into<String>, location: LatLon, variable: &str) -> Result<Self> {
        let (lat_idx, lon_idx) = grid.nearest_cell(location).ok_or_else(|| {
            Error::InvalidArgument(format!("target ({}, {}) outside grid", location.lat, location.lon))
        })?;
        let v = grid
            .variable_index(variable)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown target variable {variable}")))?;
        Ok(Self {
            name: name.into(),
            location,
            lat_idx,
            lon_idx,
            variable: v,
            variable_name: variable.to_string(),
        })
    }

    /// Centre of the snapped target cell.
    pub fn cell_latlon(&self, grid: &GridSpec) -> LatLon {
        grid.cell_latlon(self.lat_idx, self.lon_idx)
    }
}

/// European city analogues used as desk targets.
pub fn named_location(name: &str) -> Option<LatLon> {
    match name.to_ascii_lowercase().as_str() {
        "zurich" => Some(LatLon::new(47.4, 8.6)),
        "london" => Some(LatLon::new(51.5, -0.1)),
        "berlin" => Some(LatLon::new(52.5, 13.4)),
        "madrid" => Some(LatLon::new(40.4, -3.7)),
        "oslo" => Some(LatLon::new(59.9, 10.8)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_lat: usize, n_lon: usize, n_vars: usize) -> Result<Arc<GridSpec>> {
        make_grid(&GridConfig::with_dims(n_lat, n_lon, n_vars))
    }

    #[test]
    fn default_grid_shape() {
        let g = grid(36, 50, 6).unwrap();
        assert_eq!(g.n_cells(), 36 * 50);
        assert_eq!(g.shape(), (6, 36, 50));
        assert!((g.lat(35) - 70.0).abs() < 1e-12);
        assert!((g.lon(0) + 10.0).abs() < 1e-12);
    }

    #[test]
    fn minimal_grid_is_valid() {
        let g = grid(4, 4, 1).unwrap();
        assert_eq!(g.len(), 16);
    }

    #[test]
    fn zero_dimension_rejected() {
        let err = grid(0, 10, 3).unwrap_err();
        assert!(err.to_string().contains("invalid dimension"));
        assert!(grid(3, 10, 3).is_err());
    }

    #[test]
    fn duplicate_variables_rejected() {
        let mut cfg = GridConfig::with_dims(8, 8, 2);
        cfg.variables[1].name = cfg.variables[0].name.clone();
        assert!(make_grid(&cfg).is_err());
    }

    #[test]
    fn station_count_matches_enumeration() {
        let g = grid(36, 50, 6).unwrap();
        let s = make_station_grid(&g, 4).unwrap();
        let mut expected = 0;
        for i in 0..36 {
            for j in 0..50 {
                if i % 4 == 0 && j % 4 == 0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(s.len(), expected);
        assert_eq!(s.len(), 117);
        assert!(s.stations().iter().enumerate().all(|(k, st)| st.id == k));
    }

    #[test]
    fn dense_and_oversized_strides() {
        let g = grid(6, 7, 1).unwrap();
        assert_eq!(make_station_grid(&g, 1).unwrap().len(), 42);
        let small = grid(4, 4, 1).unwrap();
        assert!(make_station_grid(&small, 8).is_err());
        assert!(make_station_grid(&small, 0).is_err());
    }

    #[test]
    fn station_cells_are_unique() {
        let g = grid(8, 8, 1).unwrap();
        let dup = vec![
            Station {
                id: 0,
                lat_idx: 1,
                lon_idx: 1,
                row: 0,
                col: 0,
            },
            Station {
                id: 1,
                lat_idx: 1,
                lon_idx: 1,
                row: 0,
                col: 1,
            },
        ];
        assert!(StationGrid::new(&g, dup).is_err());
        let outside = vec![Station {
            id: 0,
            lat_idx: 9,
            lon_idx: 1,
            row: 0,
            col: 0,
        }];
        assert!(StationGrid::new(&g, outside).is_err());
    }

    #[test]
    fn blocks_partition_stations() {
        let g = grid(36, 50, 1).unwrap();
        let s = make_station_grid(&g, 4).unwrap();
        let blocks = s.neighbourhood_blocks(2);
        assert_eq!(blocks.len(), 5 * 7);
        let mut all: Vec<usize> = blocks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..s.len()).collect::<Vec<_>>());
        assert!(blocks.iter().all(|b| b.len() <= 4 && !b.is_empty()));
    }

    #[test]
    fn haversine_identity_and_antipode() {
        let p = LatLon::new(47.4, 8.6);
        assert_eq!(haversine(p, p), 0.0);
        let d = haversine(LatLon::new(0.0, 0.0), LatLon::new(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
    }

    #[test]
    fn haversine_matches_spherical_law_of_cosines() {
        let a = LatLon::new(47.4, 8.6);
        let b = LatLon::new(51.5, -0.1);
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).acos();
        let oracle = EARTH_RADIUS_KM * c;
        assert!((haversine(a, b) - oracle).abs() < 1.0);
        assert!((haversine(a, b) - 777.0).abs() < 10.0);
    }

    #[test]
    fn target_snaps_to_nearest_cell() {
        let g = grid(36, 50, 6).unwrap();
        let t = TargetSpec::new(&g, "zurich", named_location("zurich").unwrap(), "t2m").unwrap();
        assert_eq!(t.lat_idx, 12);
        assert_eq!(t.lon_idx, 18);
        assert!(TargetSpec::new(&g, "nyc", LatLon::new(40.7, -74.0), "t2m").is_err());
        assert!(TargetSpec::new(&g, "zurich", LatLon::new(47.4, 8.6), "nope").is_err());
    }

    #[test]
    fn field_rejects_bad_shapes_and_nan() {
        let g = grid(4, 4, 2).unwrap();
        assert!(FieldTensor::from_values(&g, vec![0.0; 31], 0).is_err());
        let mut v = vec![0.0; 32];
        v[5] = f64::NAN;
        assert!(matches!(FieldTensor::from_values(&g, v, 0), Err(Error::NonFinite(5))));
    }
}
