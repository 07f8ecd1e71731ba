//! Experiment orchestration for the gradient valuation engine: configuration,
//! shared state, stages, result tables, manifest and report.

pub mod config;
pub mod context;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod table;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context as _, Result};

pub use config::ExperimentConfig;
pub use context::Context;
use manifest::{RunManifest, StageRecord, Status};
pub use stages::Stage;

pub const CONFIG_FILE: &str = "config.toml";

/// Outcome of one invocation.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageRecord>,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn failed(&self) -> Vec<&StageRecord> {
        self.stages.iter().filter(|s| s.status == Status::Failed).collect()
    }
}

/// Persists the config with `out_dir` at its default so the file does not
/// depend on where the run was written.
fn write_config(ctx: &Context) -> Result<PathBuf> {
    let mut c = ctx.config.clone();
    c.out_dir = ExperimentConfig::default().out_dir;
    std::fs::write(ctx.config.out_dir.join(CONFIG_FILE), c.to_toml())?;
    Ok(PathBuf::from(CONFIG_FILE))
}

fn record(stage: &str, started: Instant, outcome: Result<Vec<PathBuf>>) -> StageRecord {
    let elapsed_seconds = started.elapsed().as_secs_f64();
    let (status, error, files) = match outcome {
        Ok(files) => (Status::Completed, None, files),
        Err(e) => {
            log::error!("stage {stage} failed: {e:#}");
            (Status::Failed, Some(format!("{e:#}")), Vec::new())
        }
    };
    StageRecord {
        stage: stage.to_string(),
        status,
        error,
        elapsed_seconds,
        finished_unix: manifest::unix_now(),
        files,
    }
}

/// Runs one stage against an existing context and writes its tables.
pub fn run_stage(ctx: &Context, stage: Stage) -> Result<Vec<PathBuf>> {
    let tables = stage.run(ctx)?;
    let mut files = Vec::with_capacity(tables.len());
    for t in tables {
        t.write(&ctx.config.out_dir)?;
        files.push(PathBuf::from(t.file_name()));
    }
    Ok(files)
}

/// Generates (or reloads) the data, runs `stages` in order, then writes the
/// report and the manifest. A failing stage is recorded and the rest still
/// run.
pub fn run(config: ExperimentConfig, stages: &[Stage]) -> Result<RunSummary> {
    std::fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    let started = Instant::now();
    let ctx = Context::new(config)?;
    for w in &ctx.warnings {
        log::warn!("{w}");
    }
    let out_dir = ctx.config.out_dir.clone();
    let mut records = Vec::new();
    let data = ctx.write_data().and_then(|mut files| {
        files.push(write_config(&ctx)?);
        Ok(files)
    });
    records.push(record("gen", started, data));
    for &stage in stages {
        let t = Instant::now();
        log::info!("stage {}", stage.name());
        records.push(record(stage.name(), t, run_stage(&ctx, stage)));
    }
    let hash = ctx.config.hash();
    let mut m = match RunManifest::load(&out_dir) {
        Some(m) if m.config_hash == hash => m,
        _ => RunManifest {
            schema_version: config::SCHEMA_VERSION,
            config_hash: hash,
            runner_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: gradval_core::VERSION.to_string(),
            seed: ctx.config.seed,
            created_unix: manifest::unix_now(),
            stages: Vec::new(),
            files: Vec::new(),
            warnings: Vec::new(),
        },
    };
    m.warnings = ctx.warnings.clone();
    m.merge_stages(records.clone());
    m.write(&out_dir)?;
    let t = Instant::now();
    let report = report::write_report(&out_dir);
    m.merge_stages(vec![record("report", t, report.map(|p| vec![p]))]);
    m.refresh_files(&out_dir)?;
    m.write(&out_dir)?;
    Ok(RunSummary {
        out_dir,
        stages: records,
        manifest: m,
    })
}

/// Every stage on `config`.
pub fn run_full(config: ExperimentConfig) -> Result<RunSummary> {
    run(config, &Stage::ALL)
}
