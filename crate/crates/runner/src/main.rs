use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gradval_runner::{report, run, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(
    name = "gradval",
    version,
    about = "Gradient attribution as an observation value signal"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stages run by `full`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    stage_filter: Vec<Stage>,
    /// Fewer integration steps and bootstrap resamples.
    #[arg(long, global = true)]
    fast: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist fields, climatology and model configs.
    Gen,
    /// Attribution versus ablation fidelity.
    Fidelity,
    /// IG, GTI and VG comparison, K and baseline sensitivity.
    Methods,
    /// Decile calibration of each payment proxy.
    Calibrate,
    /// Station selection by strategy and budget.
    Select,
    /// Payments, payment stability and shrinkage.
    Pay,
    /// Gaming scenarios.
    Game,
    /// Attacker detection on the gaming scenarios.
    Detect,
    /// Temporal convergence of spatial fidelity.
    Converge,
    /// Every stage, or those named by --stage-filter.
    Full,
    /// Rebuild report.md from the tables in the output directory.
    Report,
    /// Print the effective config as TOML.
    Config,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.fast |= c.fast;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Gen => Vec::new(),
        Command::Fidelity => vec![Stage::Fidelity],
        Command::Methods => vec![Stage::Methods],
        Command::Calibrate => vec![Stage::Calibrate],
        Command::Select => vec![Stage::Select],
        Command::Pay => vec![Stage::Pay, Stage::Stability, Stage::Shrinkage],
        Command::Game => vec![Stage::Game],
        Command::Detect => vec![Stage::Detect],
        Command::Converge => vec![Stage::Converge],
        Command::Full if cli.common.stage_filter.is_empty() => Stage::ALL.to_vec(),
        Command::Full => Stage::ALL
            .into_iter()
            .filter(|s| cli.common.stage_filter.contains(s))
            .collect(),
        Command::Report => {
            let p = report::write_report(&cfg.out_dir)?;
            println!("{}", cfg.out_dir.join(p).display());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Config => {
            print!("{}", cfg.to_toml());
            return Ok(ExitCode::SUCCESS);
        }
    };
    let summary = run(cfg, &stages)?;
    for s in &summary.stages {
        println!("{:<14} {:?} {:>8.1}s", s.stage, s.status, s.elapsed_seconds);
    }
    let failed = summary.failed();
    if failed.is_empty() {
        println!("results in {}", summary.out_dir.display());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in failed {
            eprintln!("{}: {}", f.stage, f.error.as_deref().unwrap_or("failed"));
        }
        Ok(ExitCode::FAILURE)
    }
}
