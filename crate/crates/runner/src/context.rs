//! Shared experiment state: generated data, model configurations and
//! memoised attributions, utilities and gaming runs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use anyhow::{anyhow, Context as _, Result};
use gradval_core::ablation::{global_ablation, spatial_utility, variable_std, PerturbationSpec, SpatialUtilityMap};
use gradval_core::attribution::{
    attribute, spatial_importance, spatial_signed, variable_importance, AttributionConfig, BaselineKind, Method,
};
use gradval_core::grid::{
    make_grid, make_station_grid, Climatology, FieldTensor, GridSpec, LatLon, StationGrid, TargetSpec,
};
use gradval_core::io;
use gradval_core::model::{make_truth_with_mismatch, ForecastModel, ModelConfig, ModelKind};
use gradval_core::rng;
use gradval_core::synth_fields;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One forecast model with its target and verification values.
#[derive(Debug, Clone)]
pub struct Configuration {
    pub label: String,
    pub kind: ModelKind,
    pub depth: usize,
    pub target: TargetSpec,
    pub model: ForecastModel,
    pub noise_std: f64,
    /// Verification value per evaluation timestamp.
    pub y_star: Vec<f64>,
}

impl Configuration {
    pub fn model_label(&self) -> String {
        match self.kind {
            ModelKind::Desk => format!("desk-d{}", self.depth),
            ModelKind::Linear => "linear".to_string(),
        }
    }
}

/// Per-timestamp aggregated attributions of one proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySeries {
    /// Field indices the series covers.
    pub timestamps: Vec<usize>,
    pub variable: Vec<Vec<f64>>,
    pub spatial: Vec<Vec<f64>>,
    pub spatial_signed: Vec<Vec<f64>>,
}

type Slot<T> = Arc<OnceLock<Result<Arc<T>, String>>>;

#[derive(Default)]
struct Caches {
    proxies: Mutex<HashMap<(usize, String), Slot<ProxySeries>>>,
    spatial: Mutex<HashMap<(usize, String), Slot<Vec<SpatialUtilityMap>>>>,
    global: Mutex<HashMap<usize, Slot<Vec<Vec<f64>>>>>,
    gaming: Mutex<HashMap<String, Slot<crate::stages::game::GamingRun>>>,
}

fn memo<K: std::hash::Hash + Eq + Clone, T>(
    map: &Mutex<HashMap<K, Slot<T>>>,
    key: K,
    f: impl FnOnce() -> Result<T>,
) -> Result<Arc<T>> {
    let slot = map.lock().expect("cache lock").entry(key).or_default().clone();
    slot.get_or_init(|| f().map(Arc::new).map_err(|e| format!("{e:#}")))
        .clone()
        .map_err(|e| anyhow!(e))
}

pub struct Context {
    pub config: ExperimentConfig,
    pub grid: Arc<GridSpec>,
    pub stations: StationGrid,
    pub fields: Vec<FieldTensor>,
    pub clim: Climatology,
    pub var_std: Vec<f64>,
    pub configurations: Vec<Configuration>,
    pub specs: Vec<PerturbationSpec>,
    pub warnings: Vec<String>,
    caches: Caches,
}

pub const DATA_DIR: &str = "data";

/// Hash of the inputs that determine the generated data.
pub fn data_key(config: &ExperimentConfig) -> String {
    let text = format!(
        "{}\n{}",
        config.seed,
        toml::to_string(&config.grid).expect("grid section serialises")
    );
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn field_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("field_{t:04}.bin"))
}

impl Context {
    /// Builds the context, reusing persisted data under `out_dir/data` when
    /// it was generated from the same seed and grid.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = make_grid(&config.grid_config())?;
        let stations = make_station_grid(&grid, config.grid.station_stride)?;
        let (fields, clim) = match Self::load_data(&config, &grid)? {
            Some(d) => d,
            None => synth_fields(config.seed, &grid, config.grid.n_timestamps)?,
        };
        let var_std = variable_std(&fields)?;
        let warnings = config.budgets(stations.len()).1;
        let configurations = build_configurations(&config, &grid, &fields)?;
        Ok(Self {
            specs: config.perturbation_specs(),
            config,
            grid,
            stations,
            fields,
            clim,
            var_std,
            configurations,
            warnings,
            caches: Caches::default(),
        })
    }

    fn load_data(config: &ExperimentConfig, grid: &Arc<GridSpec>) -> Result<Option<(Vec<FieldTensor>, Climatology)>> {
        let dir = config.out_dir.join(DATA_DIR);
        let key = std::fs::read_to_string(dir.join("data_key.txt")).unwrap_or_default();
        if key.trim() != data_key(config) {
            return Ok(None);
        }
        let clim_field = io::read_field_on(
            &mut std::io::BufReader::new(std::fs::File::open(dir.join("climatology.bin"))?),
            grid,
        )?;
        let fields = (0..config.grid.n_timestamps)
            .map(|t| {
                let mut r = std::io::BufReader::new(std::fs::File::open(field_path(&dir, t))?);
                Ok(io::read_field_on(&mut r, grid)?)
            })
            .collect::<Result<Vec<_>>>()
            .context("loading persisted fields")?;
        Ok(Some((fields, Climatology::new(clim_field)?)))
    }

    /// Persists fields, climatology and seeded model configs; returns the
    /// written paths relative to `out_dir`.
    pub fn write_data(&self) -> Result<Vec<PathBuf>> {
        let rel = PathBuf::from(DATA_DIR);
        let dir = self.config.out_dir.join(&rel);
        std::fs::create_dir_all(&dir)?;
        let mut written = Vec::new();
        for (t, f) in self.fields.iter().enumerate() {
            io::save_field(&field_path(&dir, t), f)?;
            written.push(field_path(&rel, t));
        }
        io::save_climatology(&dir.join("climatology.bin"), &self.clim)?;
        written.push(rel.join("climatology.bin"));
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("field_0000.csv"))?);
        io::write_field_csv(&mut csv, &self.fields[0])?;
        drop(csv);
        written.push(rel.join("field_0000.csv"));
        let models: Vec<serde_json::Value> = self
            .configurations
            .iter()
            .map(|c| {
                serde_json::json!({
                    "label": c.label,
                    "target": c.target,
                    "noise_std": c.noise_std,
                    "model": c.model.config(),
                })
            })
            .collect();
        std::fs::write(dir.join("models.json"), serde_json::to_string_pretty(&models)? + "\n")?;
        written.push(rel.join("models.json"));
        std::fs::write(dir.join("data_key.txt"), data_key(&self.config) + "\n")?;
        written.push(rel.join("data_key.txt"));
        Ok(written)
    }

    pub fn desk_configurations(&self) -> impl Iterator<Item = (usize, &Configuration)> {
        self.configurations
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ModelKind::Desk)
    }

    pub fn configuration(&self, label: &str) -> Result<usize> {
        self.configurations
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| anyhow!("no configuration {label}"))
    }

    pub fn spec_index(&self, spec: &PerturbationSpec) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s == spec)
            .ok_or_else(|| anyhow!("perturbation spec {spec:?} is not configured"))
    }

    pub fn reference_spec_index(&self) -> Result<usize> {
        self.spec_index(&self.config.reference_spec())
    }

    pub fn steps(&self) -> usize {
        self.config.steps()
    }

    /// Attributions of configuration `c` aggregated per timestamp.
    pub fn proxy(&self, c: usize, attr: &AttributionConfig) -> Result<Arc<ProxySeries>> {
        let key = (c, attr.label());
        memo(&self.caches.proxies, key, || {
            let cfg = &self.configurations[c];
            let first = usize::from(attr.method != Method::Vg && attr.baseline == BaselineKind::Persistence);
            let ts: Vec<usize> = (first..self.fields.len()).collect();
            let rows = ts
                .par_iter()
                .map(|&t| {
                    let m = attribute(&cfg.model, attr, &self.fields, t, &self.clim)?;
                    Ok((
                        variable_importance(&m),
                        spatial_importance(&m, &self.stations)?,
                        spatial_signed(&m, &self.stations)?,
                    ))
                })
                .collect::<gradval_core::Result<Vec<_>>>()?;
            let mut out = ProxySeries {
                timestamps: ts,
                variable: Vec::with_capacity(rows.len()),
                spatial: Vec::with_capacity(rows.len()),
                spatial_signed: Vec::with_capacity(rows.len()),
            };
            for (v, s, g) in rows {
                out.variable.push(v);
                out.spatial.push(s);
                out.spatial_signed.push(g);
            }
            Ok(out)
        })
    }

    /// The main proxy: IG with the configured steps and climatology baseline.
    pub fn ig(&self, c: usize) -> Result<Arc<ProxySeries>> {
        self.proxy(c, &AttributionConfig::ig(self.steps()))
    }

    pub fn method(&self, c: usize, method: Method) -> Result<Arc<ProxySeries>> {
        match method {
            Method::Ig => self.ig(c),
            Method::Gti => self.proxy(c, &AttributionConfig::gti()),
            Method::Vg => self.proxy(c, &AttributionConfig::vg()),
        }
    }

    /// Spatial utilities of configuration `c` under spec `s`, per timestamp.
    pub fn spatial(&self, c: usize, s: usize) -> Result<Arc<Vec<SpatialUtilityMap>>> {
        memo(&self.caches.spatial, (c, format!("{s}")), || {
            let cfg = &self.configurations[c];
            let spec = &self.specs[s];
            Ok(self
                .fields
                .par_iter()
                .zip(&cfg.y_star)
                .map(|(x, &y)| spatial_utility(&cfg.model, x, y, &self.stations, spec, &self.clim, &self.var_std))
                .collect::<gradval_core::Result<Vec<_>>>()?)
        })
    }

    /// Signed global utilities of configuration `c`, per timestamp.
    pub fn global(&self, c: usize) -> Result<Arc<Vec<Vec<f64>>>> {
        memo(&self.caches.global, c, || {
            let cfg = &self.configurations[c];
            Ok(self
                .fields
                .par_iter()
                .zip(&cfg.y_star)
                .map(|(x, &y)| global_ablation(&cfg.model, x, y, &self.clim).map(|g| g.utilities))
                .collect::<gradval_core::Result<Vec<_>>>()?)
        })
    }

    pub fn gaming_run(
        &self,
        label: &str,
        f: impl FnOnce() -> Result<crate::stages::game::GamingRun>,
    ) -> Result<Arc<crate::stages::game::GamingRun>> {
        memo(&self.caches.gaming, label.to_string(), f)
    }
}

fn build_configurations(
    config: &ExperimentConfig,
    grid: &Arc<GridSpec>,
    fields: &[FieldTensor],
) -> Result<Vec<Configuration>> {
    let targets: Vec<TargetSpec> = config
        .target_variables
        .iter()
        .flat_map(|v| config.targets.iter().map(move |t| (t, v)))
        .map(|(t, v)| TargetSpec::new(grid, &t.name, LatLon::new(t.lat, t.lon), v))
        .collect::<gradval_core::Result<_>>()?;
    let n_targets = config.targets.len();
    let mut specs = Vec::new();
    for &depth in &config.models.depths {
        for (ti, t) in config.targets.iter().enumerate() {
            for (vi, _) in config.target_variables.iter().enumerate() {
                let target = targets[vi * n_targets + ti].clone();
                let seed = rng::mix(&[config.seed, depth as u64, ti as u64, vi as u64]);
                specs.push((
                    format!("d{depth}-{}-{}", t.name, target.variable_name),
                    ModelConfig::desk(seed, depth),
                    target,
                    config.truth.mismatch,
                    config.truth.noise_fraction,
                ));
            }
        }
    }
    if config.models.linear_oracle {
        for (ti, t) in config.targets.iter().enumerate() {
            let target = targets[ti].clone();
            let seed = rng::mix(&[config.seed, 0, ti as u64, 0]);
            specs.push((
                format!("lin-{}-{}", t.name, target.variable_name),
                ModelConfig::linear(seed),
                target,
                0.0,
                0.0,
            ));
        }
    }
    specs
        .into_par_iter()
        .map(|(label, mc, target, mismatch, noise_fraction)| {
            let model = ForecastModel::from_config(grid, &target, &mc)?;
            let preds = fields
                .iter()
                .map(|x| model.forward(x))
                .collect::<gradval_core::Result<Vec<_>>>()?;
            let m = preds.iter().sum::<f64>() / preds.len() as f64;
            let sd = (preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / preds.len() as f64).sqrt();
            let noise_std = noise_fraction * sd;
            let truth = make_truth_with_mismatch(&model, rng::mix(&[mc.seed, 1]), noise_std, mismatch)?;
            let y_star = fields
                .iter()
                .map(|x| truth.verification(x))
                .collect::<gradval_core::Result<Vec<_>>>()?;
            model.reset_counts();
            Ok(Configuration {
                label,
                kind: mc.kind,
                depth: mc.depth,
                target,
                model,
                noise_std,
                y_star,
            })
        })
        .collect()
}
