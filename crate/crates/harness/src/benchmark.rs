//! Calibrate every (policy, delta) cell, simulate the replications and
//! aggregate them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use mtssrp::calibrate::{bisect_threshold, Welford};
use mtssrp::policy::{Experiment, TraceRow};
use mtssrp::scenarios::ScenarioSpec;
use mtssrp::seeds::{derive_seed, tag};
use mtssrp::ModeBank;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BenchmarkConfig, PolicyEntry};

/// One simulated replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub delta: f64,
    pub replication: u64,
    pub data_seed: u64,
    pub policy_seed: u64,
    /// Alarm tick; empty when the run hit the horizon.
    pub stop: Option<u64>,
    /// `max(0, T - change_time)`, with `T` the horizon for censored runs.
    pub delay: u64,
    pub isolated: Option<usize>,
    pub correct: bool,
    pub censored: bool,
}

/// Calibrated threshold for one (policy, delta) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub key: String,
    pub policy: String,
    pub delta: f64,
    pub threshold: f64,
    pub arl0: f64,
    pub arl0_se: f64,
    pub censored: u64,
    pub iterations: u32,
    pub converged: bool,
}

/// Aggregates for one (policy, delta) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub delta: f64,
    pub threshold: f64,
    pub replications: u64,
    pub fired: u64,
    pub mean_delay: f64,
    pub sd_delay: f64,
    pub se_delay: f64,
    /// Fraction of fired runs isolating a true mode; empty when none fired.
    pub accuracy: Option<f64>,
    pub accuracy_sd: Option<f64>,
    pub accuracy_se: Option<f64>,
    pub censoring_rate: f64,
}

/// A recorded per-tick trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub policy: String,
    pub delta: f64,
    pub replication: u64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub config: BenchmarkConfig,
    pub config_hash: String,
    pub calibrations: Vec<CalibrationRecord>,
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub trajectories: Vec<Trajectory>,
}

/// Thresholds keyed by [`calibration_key`], persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCache {
    pub entries: BTreeMap<String, CalibrationRecord>,
}

impl CalibrationCache {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Master seed of the in-control runs used for calibration, kept apart from
/// the evaluation runs.
pub fn calibration_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, &[tag("calibration")])
}

/// Everything that determines a cell's threshold.
pub fn calibration_key(cfg: &BenchmarkConfig, entry: &PolicyEntry, delta: f64) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        scenario: &'a ScenarioSpec,
        policy: &'a mtssrp::policy::PolicySpec,
        spec: &'a mtssrp::calibrate::CalibrationSpec,
        seed: u64,
    }
    let key = Key {
        scenario: &cfg.scenario.with_delta(delta),
        policy: &entry.spec,
        spec: &cfg.calibration_spec(),
        seed: calibration_seed(cfg.master_seed),
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("key serializes")))
}

/// One (policy, delta) cell with its bank built.
pub struct Cell<'a> {
    pub entry: &'a PolicyEntry,
    pub delta: f64,
    pub bank: Arc<ModeBank>,
    pub scenario: ScenarioSpec,
}

impl Cell<'_> {
    pub fn experiment(&self, master_seed: u64) -> Result<Experiment> {
        Ok(Experiment::new(
            Arc::clone(&self.bank),
            self.scenario.clone(),
            self.entry.spec,
            master_seed,
        )?)
    }
}

/// Cells in output order: delta-major, then policies as configured.
pub fn cells(cfg: &BenchmarkConfig) -> Result<Vec<Cell<'_>>> {
    let mut out = Vec::new();
    for &delta in &cfg.delta_grid {
        let scenario = cfg.scenario.with_delta(delta);
        let bank = Arc::new(scenario.build_bank()?);
        for entry in &cfg.policies {
            out.push(Cell {
                entry,
                delta,
                bank: Arc::clone(&bank),
                scenario: scenario.clone(),
            });
        }
    }
    Ok(out)
}

/// Run `f` on a pool with `workers` threads (`0` = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

/// Calibrate every cell, reusing cached thresholds.
pub fn calibrate_all(cfg: &BenchmarkConfig, cache: &mut CalibrationCache) -> Result<Vec<CalibrationRecord>> {
    let spec = cfg.calibration_spec();
    let seed = calibration_seed(cfg.master_seed);
    let mut out = Vec::new();
    for cell in cells(cfg)? {
        let key = calibration_key(cfg, cell.entry, cell.delta);
        let record = match cache.entries.get(&key) {
            Some(hit) => CalibrationRecord {
                policy: cell.entry.name().to_string(),
                ..hit.clone()
            },
            None => {
                let exp = cell.experiment(seed)?;
                let res = bisect_threshold(&spec, &exp)
                    .with_context(|| format!("calibrating {} at delta {}", cell.entry.name(), cell.delta))?;
                let record = CalibrationRecord {
                    key: key.clone(),
                    policy: cell.entry.name().to_string(),
                    delta: cell.delta,
                    threshold: res.threshold,
                    arl0: res.achieved.mean,
                    arl0_se: res.achieved.se,
                    censored: res.achieved.censored,
                    iterations: res.iterations,
                    converged: res.converged,
                };
                cache.entries.insert(key, record.clone());
                record
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Simulate one replication of a cell at a fixed threshold.
pub fn run_one(
    exp: &Experiment,
    name: &str,
    threshold: f64,
    horizon: u64,
    rep: u64,
    trace: Option<&mut Vec<TraceRow>>,
) -> RunRecord {
    let outcome = exp.path(rep, false).run(threshold, horizon, trace);
    let change = exp.scenario.change_time;
    let end = outcome.stop.unwrap_or(horizon);
    let truth = exp.true_modes(rep);
    RunRecord {
        policy: name.to_string(),
        delta: exp.scenario.delta,
        replication: rep,
        data_seed: exp.data_seed(rep),
        policy_seed: exp.policy_seed(rep),
        stop: outcome.stop,
        delay: end.saturating_sub(change),
        isolated: outcome.isolated.filter(|_| outcome.stop.is_some()),
        correct: outcome.stop.is_some() && outcome.isolated.is_some_and(|k| truth.contains(&k)),
        censored: outcome.stop.is_none(),
    }
}

/// Aggregate the records of one cell, in replication order.
pub fn summarize_cell(policy: &str, delta: f64, threshold: f64, records: &[&RunRecord]) -> SummaryRow {
    let delays: Welford = records.iter().map(|r| r.delay as f64).collect();
    let hits: Welford = records
        .iter()
        .filter(|r| r.stop.is_some())
        .map(|r| if r.correct { 1.0 } else { 0.0 })
        .collect();
    let n = records.len() as u64;
    let censored = records.iter().filter(|r| r.censored).count() as f64;
    SummaryRow {
        policy: policy.to_string(),
        delta,
        threshold,
        replications: n,
        fired: hits.n,
        mean_delay: delays.mean,
        sd_delay: delays.sd(),
        se_delay: delays.se(),
        accuracy: (hits.n > 0).then_some(hits.mean),
        accuracy_sd: (hits.n > 0).then(|| hits.sd()),
        accuracy_se: (hits.n > 0).then(|| hits.se()),
        censoring_rate: if n == 0 { 0.0 } else { censored / n as f64 },
    }
}

/// Rebuild the summary table from records and thresholds.
pub fn summarize(calibrations: &[CalibrationRecord], records: &[RunRecord]) -> Vec<SummaryRow> {
    calibrations
        .iter()
        .map(|c| {
            let mut cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.policy == c.policy && r.delta.to_bits() == c.delta.to_bits())
                .collect();
            cell.sort_by_key(|r| r.replication);
            summarize_cell(&c.policy, c.delta, c.threshold, &cell)
        })
        .collect()
}

/// Simulate every cell at the given thresholds.
pub fn simulate(
    cfg: &BenchmarkConfig,
    calibrations: &[CalibrationRecord],
) -> Result<(Vec<RunRecord>, Vec<Trajectory>)> {
    let horizon = cfg.horizon();
    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for (cell, cal) in cells(cfg)?.into_iter().zip(calibrations) {
        let exp = cell.experiment(cfg.master_seed)?;
        let name = cell.entry.name();
        let batch: Vec<RunRecord> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_one(&exp, name, cal.threshold, horizon, rep, None))
            .collect();
        records.extend(batch);
        for &rep in cfg.output.trajectories.iter().filter(|&&r| r < cfg.replications) {
            let mut rows = Vec::new();
            run_one(&exp, name, cal.threshold, horizon, rep, Some(&mut rows));
            trajectories.push(Trajectory {
                policy: name.to_string(),
                delta: cell.delta,
                replication: rep,
                rows,
            });
        }
    }
    Ok((records, trajectories))
}

/// Calibrate (through `cache`), simulate and aggregate.
pub fn run_benchmark_with_cache(cfg: &BenchmarkConfig, cache: &mut CalibrationCache) -> Result<BenchmarkResult> {
    cfg.validate()?;
    with_workers(cfg.workers, || -> Result<BenchmarkResult> {
        let calibrations = calibrate_all(cfg, cache)?;
        let (records, trajectories) = simulate(cfg, &calibrations)?;
        let summary = summarize(&calibrations, &records);
        Ok(BenchmarkResult {
            config: cfg.clone(),
            config_hash: cfg.semantic_hash(),
            calibrations,
            records,
            summary,
            trajectories,
        })
    })?
}

/// Calibrate, simulate and aggregate with a throwaway cache.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    run_benchmark_with_cache(cfg, &mut CalibrationCache::default())
}
