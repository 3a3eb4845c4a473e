//! Report files: `trials.csv`, `summary.json`, `timings.csv`, `ablation.csv`.
//!
//! `trials.csv` and `summary.json` are byte-identical across runs with the
//! same configuration and seed. Wall-clock data goes to the other two files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::experiment::{AblationPoint, ExperimentReport, TrialScore};

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

pub fn write_reports(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut trials = csv::Writer::from_path(dir.join(TRIALS_FILE))?;
    for s in &report.scores {
        trials.serialize(s)?;
    }
    trials.flush()?;

    let mut timings = csv::Writer::from_path(dir.join(TIMINGS_FILE))?;
    for t in &report.timings {
        timings.serialize(t)?;
    }
    timings.flush()?;

    let mut summary = serde_json::to_string_pretty(report)?;
    summary.push('\n');
    fs::write(dir.join(SUMMARY_FILE), summary)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<TrialScore>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn write_ablation(points: &[AblationPoint], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(ABLATION_FILE))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of mean and median scores per setting.
pub fn format_summary(report: &ExperimentReport) -> String {
    let mut out = String::new();
    for s in &report.settings {
        out.push_str(&format!("setting {} (failed trials: {})\n", s.setting, s.failed_trials));
        for m in &s.methods {
            out.push_str(&format!("  {:<4} mean {:.6}  median {:.6}  n={}\n", m.method, m.mean, m.median, m.count));
        }
        if let Some(f) = &s.friedman {
            out.push_str(&format!("  friedman chi2 {:.4}  p {:.3e}\n", f.statistic, f.p_value));
        }
        if let Some(n) = &s.nemenyi {
            out.push_str(&format!("  nemenyi CD {:.4} at alpha {}\n", n.critical_difference, n.alpha));
        }
    }
    out
}
