//! Experiment configuration: a versioned TOML document.
//!
//! Every section has defaults, so an empty file (or one holding only
//! `schema_version`) describes the default desk experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use gradval_core::ablation::{PerturbationMode, PerturbationSpec};
use gradval_core::attribution::BaselineKind;
use gradval_core::gaming::{Placement, Scope};
use gradval_core::grid::{desk_variables, GridConfig, VariableSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Use `attribution.fast_steps` and `statistics.fast_resamples`.
    pub fast: bool,
    pub grid: GridSection,
    pub models: ModelSection,
    pub truth: TruthSection,
    pub targets: Vec<TargetEntry>,
    pub target_variables: Vec<String>,
    pub attribution: AttributionSection,
    pub ablation: AblationSection,
    pub statistics: StatisticsSection,
    pub selection: SelectionSection,
    pub payment: PaymentSection,
    pub gaming: GamingSection,
    pub convergence: ConvergenceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub station_stride: usize,
    pub n_timestamps: usize,
    pub variables: Vec<VariableSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// One desk model per depth.
    pub depths: Vec<usize>,
    /// Add linear-model configurations with noiseless truth as a fidelity oracle.
    pub linear_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    /// Relative weight mismatch of the truth model.
    pub mismatch: f64,
    /// Verification noise as a fraction of the prediction std.
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub steps: usize,
    pub fast_steps: usize,
    /// IG step counts compared by the K-sensitivity table.
    pub k_sensitivity: Vec<usize>,
    /// Alternative baselines compared against climatology.
    pub baselines: Vec<BaselineKind>,
    /// IG steps used for the baseline comparison.
    pub baseline_steps: usize,
    /// Variable whose units are multiplied in the scale-planting experiment.
    pub planted_variable: String,
    pub planted_factor: f64,
    pub planted_timestamps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub patches: Vec<usize>,
    pub modes: Vec<PerturbationMode>,
    pub magnitude: f64,
    /// Patch used with mean replacement for payments, shrinkage and convergence.
    pub reference_patch: usize,
    /// Timestamps used by the joint-ablation stage.
    pub subadditivity_timestamps: usize,
    pub subadditivity_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticsSection {
    pub resamples: usize,
    pub fast_resamples: usize,
    pub level: f64,
    pub fdr_q: f64,
    /// Station-lattice block edge for the spatial bootstrap.
    pub block_size: usize,
    pub topk_global: usize,
    pub topk_spatial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub budgets: Vec<usize>,
    /// Uniform draws averaged per budget.
    pub uniform_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaymentSection {
    pub budget: f64,
    pub stability_top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamingSection {
    pub depth: usize,
    pub target_variable: String,
    /// Target names; empty means every configured target.
    pub targets: Vec<String>,
    pub timestamps: usize,
    pub steps: usize,
    pub n_attackers: Vec<usize>,
    pub pcts: Vec<f64>,
    pub seeds: usize,
    pub null_seeds: usize,
    pub spoof: bool,
    /// Extra magnitudes, placements and scopes run on the first gaming target.
    pub extended_pcts: Vec<f64>,
    pub extended_placements: Vec<Placement>,
    pub extended_scopes: Vec<Scope>,
    pub extended_n: usize,
    pub extended_pct: f64,
    pub per_timestamp_d4: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 20_240_601,
            out_dir: PathBuf::from("results"),
            fast: false,
            grid: GridSection::default(),
            models: ModelSection::default(),
            truth: TruthSection::default(),
            targets: vec![
                TargetEntry::new("zurich", 47.4, 8.6),
                TargetEntry::new("london", 51.5, -0.1),
                TargetEntry::new("berlin", 52.5, 13.4),
            ],
            target_variables: vec!["t2m".into(), "u10m".into(), "msl".into()],
            attribution: AttributionSection::default(),
            ablation: AblationSection::default(),
            statistics: StatisticsSection::default(),
            selection: SelectionSection::default(),
            payment: PaymentSection::default(),
            gaming: GamingSection::default(),
            convergence: ConvergenceSection::default(),
        }
    }
}

impl TargetEntry {
    pub fn new(name: &str, lat: f64, lon: f64) -> Self {
        Self {
            name: name.into(),
            lat,
            lon,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            n_lat: g.n_lat,
            n_lon: g.n_lon,
            lat_min: g.lat_min,
            lat_max: g.lat_max,
            lon_min: g.lon_min,
            lon_max: g.lon_max,
            station_stride: 4,
            n_timestamps: 60,
            variables: desk_variables(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            depths: vec![1, 3],
            linear_oracle: true,
        }
    }
}

impl Default for TruthSection {
    fn default() -> Self {
        Self {
            mismatch: gradval_core::model::TRUTH_MISMATCH,
            noise_fraction: 0.02,
        }
    }
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            steps: gradval_core::attribution::DEFAULT_STEPS,
            fast_steps: gradval_core::attribution::FAST_STEPS,
            k_sensitivity: vec![1, 8, 50],
            baselines: vec![BaselineKind::Zero, BaselineKind::Persistence],
            baseline_steps: 8,
            planted_variable: "tcwv".into(),
            planted_factor: 1000.0,
            planted_timestamps: 10,
        }
    }
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            patches: vec![1, 3, 5],
            modes: PerturbationMode::ALL.to_vec(),
            magnitude: 0.1,
            reference_patch: 3,
            subadditivity_timestamps: 10,
            subadditivity_set_size: 5,
        }
    }
}

impl Default for StatisticsSection {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            fast_resamples: 1_000,
            level: 0.95,
            fdr_q: 0.05,
            block_size: 2,
            topk_global: 3,
            topk_spatial: 10,
        }
    }
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            budgets: vec![5, 10, 20, 50, 100],
            uniform_draws: 100,
        }
    }
}

impl Default for PaymentSection {
    fn default() -> Self {
        Self {
            budget: gradval_core::incentive::DEFAULT_BUDGET,
            stability_top_k: 10,
        }
    }
}

impl Default for GamingSection {
    fn default() -> Self {
        Self {
            depth: 3,
            target_variable: "t2m".into(),
            targets: Vec::new(),
            timestamps: 10,
            steps: gradval_core::attribution::FAST_STEPS,
            n_attackers: vec![1, 3, 5],
            pcts: vec![10.0, 30.0, 50.0],
            seeds: 10,
            null_seeds: 2,
            spoof: true,
            extended_pcts: vec![100.0, 200.0],
            extended_placements: vec![Placement::Close, Placement::Mid, Placement::Mixed],
            extended_scopes: vec![Scope::SingleTargetVar, Scope::SingleOtherVar],
            extended_n: 3,
            extended_pct: 50.0,
            per_timestamp_d4: false,
        }
    }
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML with the output directory removed, so
    /// the hash names the experiment rather than where it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn grid_config(&self) -> GridConfig {
        let g = &self.grid;
        GridConfig {
            n_lat: g.n_lat,
            n_lon: g.n_lon,
            lat_min: g.lat_min,
            lat_max: g.lat_max,
            lon_min: g.lon_min,
            lon_max: g.lon_max,
            variables: g.variables.clone(),
        }
    }

    pub fn steps(&self) -> usize {
        if self.fast {
            self.attribution.fast_steps
        } else {
            self.attribution.steps
        }
    }

    pub fn resamples(&self) -> usize {
        if self.fast {
            self.statistics.fast_resamples
        } else {
            self.statistics.resamples
        }
    }

    /// Every (mode, patch) pair, modes outermost.
    pub fn perturbation_specs(&self) -> Vec<PerturbationSpec> {
        let mut out = Vec::new();
        for &mode in &self.ablation.modes {
            for &patch in &self.ablation.patches {
                let magnitude = match mode {
                    PerturbationMode::MeanReplace => 0.0,
                    _ => self.ablation.magnitude,
                };
                out.push(PerturbationSpec {
                    mode,
                    patch,
                    magnitude,
                    seed: self.seed,
                });
            }
        }
        out
    }

    pub fn reference_spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            seed: self.seed,
            ..PerturbationSpec::mean_replace(self.ablation.reference_patch)
        }
    }

    /// Budgets clipped to `n_stations`, deduplicated, with a warning per
    /// clipped entry.
    pub fn budgets(&self, n_stations: usize) -> (Vec<usize>, Vec<String>) {
        let mut out: Vec<usize> = Vec::new();
        let mut warnings = Vec::new();
        for &k in &self.selection.budgets {
            let kk = k.min(n_stations);
            if kk != k {
                warnings.push(format!("budget K = {k} clipped to N = {n_stations}"));
            }
            if !out.contains(&kk) {
                out.push(kk);
            }
        }
        (out, warnings)
    }

    /// Structural checks that do not need generated data.
    pub fn validate(&self) -> Result<()> {
        gradval_core::grid::GridSpec::new(&self.grid_config()).context("grid section")?;
        let var_exists = |name: &str| self.grid.variables.iter().any(|v| v.name == name);
        if self.grid.station_stride == 0 {
            bail!("grid.station_stride must be >= 1");
        }
        if self.grid.n_timestamps < 20 {
            bail!("grid.n_timestamps must be >= 20 for the convergence analysis");
        }
        if self.targets.is_empty() || self.target_variables.is_empty() {
            bail!("at least one target and one target variable are required");
        }
        for t in &self.targets {
            if self.targets.iter().filter(|u| u.name == t.name).count() > 1 {
                bail!("duplicate target name {}", t.name);
            }
        }
        for v in self.target_variables.iter().chain([&self.gaming.target_variable]) {
            if !var_exists(v) {
                bail!("unknown variable {v}");
            }
        }
        if !var_exists(&self.attribution.planted_variable) {
            bail!("unknown planted variable {}", self.attribution.planted_variable);
        }
        if !(self.attribution.planted_factor > 0.0) {
            bail!("attribution.planted_factor must be > 0");
        }
        if self.models.depths.is_empty() {
            bail!("at least one model depth is required");
        }
        for &d in self.models.depths.iter().chain([&self.gaming.depth]) {
            if !(1..=gradval_core::model::MAX_DEPTH).contains(&d) {
                bail!("model depth {d} outside [1, {}]", gradval_core::model::MAX_DEPTH);
            }
        }
        if !self.models.depths.contains(&self.gaming.depth) {
            bail!("gaming.depth must be one of models.depths");
        }
        if !self.target_variables.contains(&self.gaming.target_variable) {
            bail!("gaming.target_variable must be one of target_variables");
        }
        for name in &self.gaming.targets {
            if !self.targets.iter().any(|t| &t.name == name) {
                bail!("gaming target {name} is not a configured target");
            }
        }
        if self.attribution.steps == 0 || self.attribution.fast_steps == 0 || self.gaming.steps == 0 {
            bail!("attribution steps must be >= 1");
        }
        if self.attribution.k_sensitivity.contains(&0) || self.attribution.baseline_steps == 0 {
            bail!("attribution step counts must be >= 1");
        }
        if self.ablation.patches.is_empty() || self.ablation.modes.is_empty() {
            bail!("at least one patch size and perturbation mode are required");
        }
        for spec in self.perturbation_specs().iter().chain([&self.reference_spec()]) {
            spec.validate().context("ablation section")?;
        }
        if self.ablation.subadditivity_set_size < 2 {
            bail!("ablation.subadditivity_set_size must be >= 2");
        }
        let s = &self.statistics;
        if s.resamples.min(s.fast_resamples) < gradval_core::metrics::bootstrap::MIN_RESAMPLES {
            bail!(
                "statistics resamples must be >= {}",
                gradval_core::metrics::bootstrap::MIN_RESAMPLES
            );
        }
        if !(s.level > 0.0 && s.level < 1.0) || !(s.fdr_q > 0.0 && s.fdr_q < 1.0) {
            bail!("statistics.level and statistics.fdr_q must lie in (0, 1)");
        }
        if self.selection.budgets.contains(&0) || self.selection.uniform_draws == 0 {
            bail!("selection budgets and uniform_draws must be >= 1");
        }
        if !(self.payment.budget > 0.0) || self.payment.stability_top_k == 0 {
            bail!("payment budget and stability_top_k must be positive");
        }
        if self.gaming.timestamps == 0 || self.gaming.timestamps > self.grid.n_timestamps {
            bail!("gaming.timestamps must be in [1, grid.n_timestamps]");
        }
        if !(self.convergence.alpha > 0.0 && self.convergence.alpha < 1.0) {
            bail!("convergence.alpha must lie in (0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.validate().unwrap();
    }

    #[test]
    fn partial_document_uses_defaults() {
        let c = ExperimentConfig::from_toml("schema_version = 1\nseed = 5\n[gaming]\nseeds = 2\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.gaming.seeds, 2);
        assert_eq!(c.grid, GridSection::default());
    }

    #[test]
    fn wrong_schema_and_unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("schema_version = 2").is_err());
        assert!(ExperimentConfig::from_toml("schema_version = 1\nbogus = 3").is_err());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn budgets_are_clipped_with_warning() {
        let c = ExperimentConfig::default();
        let (k, w) = c.budgets(60);
        assert_eq!(k, vec![5, 10, 20, 50, 60]);
        assert_eq!(w.len(), 1);
        let (k, w) = c.budgets(117);
        assert_eq!(k, vec![5, 10, 20, 50, 100]);
        assert!(w.is_empty());
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let mut c = ExperimentConfig::default();
        c.target_variables.push("nope".into());
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.ablation.patches = vec![2];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.gaming.depth = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn specs_cover_the_factorial() {
        let c = ExperimentConfig::default();
        let specs = c.perturbation_specs();
        assert_eq!(specs.len(), 9);
        assert!(specs.iter().all(|s| s.validate().is_ok()));
    }
}
