//! Markdown summary of a results directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::manifest::RunManifest;
use crate::table::Table;

pub const REPORT_FILE: &str = "report.md";
const MAX_ROWS: usize = 60;

/// Summary tables shown in the report, with their headings.
const SECTIONS: &[(&str, &str)] = &[
    ("fidelity_summary", "Attribution fidelity"),
    ("methods_summary", "Attribution methods"),
    ("methods_pairwise", "Pairwise method win rates"),
    ("scale_invariance", "Planted unit change"),
    ("calibration_summary", "Payment calibration"),
    ("selection_summary", "Station selection"),
    ("stability_summary", "Payment stability"),
    ("shrinkage_summary", "Shrinkage towards the distance prior"),
    ("subadditivity_summary", "Subadditivity"),
    ("gaming_summary", "Gaming outcomes"),
    ("detection_summary", "Attacker detection"),
    ("d4_by_magnitude", "D4 suspicion by inflation magnitude"),
    ("convergence", "Temporal convergence"),
];

fn markdown(t: &Table) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", t.header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(t.header.len()));
    for r in t.rows.iter().take(MAX_ROWS) {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    if t.rows.len() > MAX_ROWS {
        let _ = writeln!(
            s,
            "\n{} of {} rows shown; see `{}`.",
            MAX_ROWS,
            t.rows.len(),
            t.file_name()
        );
    }
    s
}

pub fn render(dir: &Path) -> Result<String> {
    let mut out = String::from("# Gradient valuation results\n\n");
    if let Some(m) = RunManifest::load(dir) {
        let _ = writeln!(out, "Config hash `{}`, seed {}.\n", m.config_hash, m.seed);
        let _ = writeln!(out, "| stage | status | seconds |\n|---|---|---|");
        for s in &m.stages {
            let _ = writeln!(out, "| {} | {:?} | {:.1} |", s.stage, s.status, s.elapsed_seconds);
        }
        out.push('\n');
        for w in &m.warnings {
            let _ = writeln!(out, "> {w}");
        }
        if !m.warnings.is_empty() {
            out.push('\n');
        }
    }
    for (name, heading) in SECTIONS {
        let path = dir.join(format!("{name}.csv"));
        if path.exists() {
            let t = Table::read(&path)?;
            let _ = writeln!(out, "## {heading}\n\n{}", markdown(&t));
        }
    }
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    out.push_str("## Plot-ready tables\n\n");
    for p in csvs {
        let t = Table::read(&p)?;
        let _ = writeln!(
            out,
            "- `{}`: {} rows; columns {}",
            t.file_name(),
            t.rows.len(),
            t.header.join(", ")
        );
    }
    Ok(out)
}

pub fn write_report(dir: &Path) -> Result<PathBuf> {
    let text = render(dir)?;
    std::fs::write(dir.join(REPORT_FILE), text)?;
    Ok(PathBuf::from(REPORT_FILE))
}
