//! On-disk artifacts. Column order is part of the contract (see README).
//!
//! - `records.csv`: one row per replication.
//! - `summary.csv`: one row per (policy, delta).
//! - `summary.json`: config, config hash, calibrations and summary rows.
//! - `trajectory_<rep>.csv`: per-tick statistic, plan and mode ranking.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mtssrp::policy::TraceRow;
use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkResult, CalibrationRecord, RunRecord, SummaryRow, Trajectory};
use crate::config::BenchmarkConfig;

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Modes listed per tick in trajectory files.
pub const RANKING_WIDTH: usize = 10;

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub config_hash: String,
    pub config: BenchmarkConfig,
    pub calibrations: Vec<CalibrationRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SummaryDocument {
    pub fn from_result(result: &BenchmarkResult) -> Self {
        Self {
            config_hash: result.config_hash.clone(),
            config: result.config.clone(),
            calibrations: result.calibrations.clone(),
            summary: result.summary.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_JSON);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner()?)
}

pub fn records_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    csv_bytes(records)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    csv_bytes(rows)
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<Result<Vec<RunRecord>, _>>()?)
}

pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RECORDS_FILE);
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    parse_records(&bytes)
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Trajectory CSV: `t,statistic,plan,top_modes,top_statistics`. Lists are
/// space-separated; the mode columns are empty for per-sensor policies.
pub fn trajectory_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "statistic", "plan", "top_modes", "top_statistics"])?;
    for row in rows {
        let (modes, stats) = match &row.ranking {
            Some(ranking) => {
                let top = &ranking[..ranking.len().min(RANKING_WIDTH)];
                (joined(top), joined(top.iter().map(|&k| row.locals[k])))
            }
            None => (String::new(), String::new()),
        };
        w.write_record([
            row.t.to_string(),
            row.statistic.to_string(),
            joined(&row.plan),
            modes,
            stats,
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn trajectory_name(rep: u64) -> String {
    format!("trajectory_{rep}.csv")
}

/// Directory for one cell's trajectories, e.g. `mtssrp_d0.8`.
pub fn cell_dir(policy: &str, delta: f64) -> String {
    format!("{policy}_d{delta}")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    let sub = dir.join(cell_dir(&traj.policy, traj.delta));
    std::fs::create_dir_all(&sub)?;
    let path = sub.join(trajectory_name(traj.replication));
    write(&path, &trajectory_csv(&traj.rows)?)?;
    Ok(path)
}

/// Write every artifact of a run into `dir`.
pub fn export(result: &BenchmarkResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join(RECORDS_FILE), &records_csv(&result.records)?)?;
    write(&dir.join(SUMMARY_CSV), &summary_csv(&result.summary)?)?;
    write(
        &dir.join(SUMMARY_JSON),
        SummaryDocument::from_result(result).to_json()?.as_bytes(),
    )?;
    for traj in &result.trajectories {
        write_trajectory(dir, traj)?;
    }
    Ok(())
}
