//! Result documents (JSON) and flat summaries (CSV).
//!
//! `summary.csv` columns, in order: seed, success, episodes, steps,
//! obs_samples, reward_samples, bad_events_total, wall_ms.
//!
//! `sweep.csv` columns: point, one column per grid key (compact JSON of the
//! value), seeds, successes, success_rate, suboptimal, budget_exhausted,
//! errors, median_steps, p90_steps, median_episodes, median_obs_samples,
//! median_reward_samples, median_bad_events. Floats use the shortest
//! representation that round-trips.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ReportFormat;
use crate::error::{HarnessError, Result};
use crate::experiment::{Quantiles, RunReport, SweepReport};

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "seed",
    "success",
    "episodes",
    "steps",
    "obs_samples",
    "reward_samples",
    "bad_events_total",
    "wall_ms",
];

const SWEEP_COLUMNS: [&str; 12] = [
    "seeds",
    "successes",
    "success_rate",
    "suboptimal",
    "budget_exhausted",
    "errors",
    "median_steps",
    "p90_steps",
    "median_episodes",
    "median_obs_samples",
    "median_reward_samples",
    "median_bad_events",
];

fn json_text<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

fn write(path: PathBuf, contents: &[u8]) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Validation(format!("csv: {e}")))
}

pub fn summary_csv(report: &RunReport) -> Result<Vec<u8>> {
    let rows = report
        .seeds
        .iter()
        .map(|s| {
            vec![
                s.seed.to_string(),
                s.success.to_string(),
                s.ledger.episodes.to_string(),
                s.ledger.steps.to_string(),
                s.ledger.obs_samples.to_string(),
                s.ledger.reward_samples.to_string(),
                s.bad_events_total.to_string(),
                s.wall_ms.to_string(),
            ]
        })
        .collect();
    csv_bytes(
        SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows,
    )
}

fn median(q: &Option<Quantiles>) -> String {
    q.map(|q| q.median.to_string()).unwrap_or_default()
}

pub fn sweep_csv(report: &SweepReport) -> Result<Vec<u8>> {
    let keys: Vec<&String> = report.grid.keys().collect();
    let mut header = vec!["point".to_string()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(SWEEP_COLUMNS.iter().map(|c| c.to_string()));
    let rows = report
        .points
        .iter()
        .map(|p| {
            let a = &p.aggregate;
            let mut row = vec![p.index.to_string()];
            row.extend(keys.iter().map(|k| p.values[*k].to_string()));
            row.extend([
                a.seeds.to_string(),
                a.successes.to_string(),
                a.success_rate.to_string(),
                a.suboptimal.to_string(),
                a.budget_exhausted.to_string(),
                a.errors.to_string(),
                median(&a.steps),
                a.steps.map(|q| q.p90.to_string()).unwrap_or_default(),
                median(&a.episodes),
                median(&a.obs_samples),
                median(&a.reward_samples),
                median(&a.bad_events),
            ]);
            row
        })
        .collect();
    csv_bytes(header, rows)
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Writes `result.json` and/or `summary.csv`; returns the written paths.
pub fn write_run(report: &RunReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let mut out = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        out.push(write(
            dir.join("result.json"),
            json_text(report).as_bytes(),
        )?);
    }
    if formats.contains(&ReportFormat::Csv) {
        out.push(write(dir.join("summary.csv"), &summary_csv(report)?)?);
    }
    Ok(out)
}

/// Writes `sweep.json` and `sweep.csv`.
pub fn write_sweep(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    Ok(vec![
        write(dir.join("sweep.json"), json_text(report).as_bytes())?,
        write(dir.join("sweep.csv"), &sweep_csv(report)?)?,
    ])
}
