//! Re-execute one archived replication with full tracing.

use std::path::Path;

use anyhow::{anyhow, bail, Result};

use crate::benchmark::{cells, run_one, RunRecord, Trajectory};
use crate::export::{load_records, SummaryDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub record: RunRecord,
    pub trajectory: Trajectory,
}

/// Replay `rep` of `policy` at `delta` from an archive directory. Fails if
/// the archived config no longer hashes to the stored value, or if the
/// re-run disagrees with the archived record.
pub fn replay(dir: &Path, policy: &str, delta: f64, rep: u64) -> Result<Replay> {
    let doc = SummaryDocument::load(dir)?;
    replay_from(&doc, &load_records(dir)?, policy, delta, rep)
}

pub fn replay_from(doc: &SummaryDocument, records: &[RunRecord], policy: &str, delta: f64, rep: u64) -> Result<Replay> {
    let hash = doc.config.semantic_hash();
    if hash != doc.config_hash {
        bail!(
            "config hash mismatch: archive says {}, config hashes to {hash}",
            doc.config_hash
        );
    }
    let cfg = &doc.config;
    let same = |d: f64| d.to_bits() == delta.to_bits();
    let cal = doc
        .calibrations
        .iter()
        .find(|c| c.policy == policy && same(c.delta))
        .ok_or_else(|| anyhow!("no calibration for {policy} at delta {delta}"))?;
    let cell = cells(cfg)?
        .into_iter()
        .find(|c| c.entry.name() == policy && same(c.delta))
        .ok_or_else(|| anyhow!("no cell for {policy} at delta {delta}"))?;
    let exp = cell.experiment(cfg.master_seed)?;
    let mut rows = Vec::new();
    let record = run_one(&exp, policy, cal.threshold, cfg.horizon(), rep, Some(&mut rows));
    if let Some(archived) = records
        .iter()
        .find(|r| r.policy == policy && same(r.delta) && r.replication == rep)
    {
        if archived != &record {
            bail!("replay diverged from the archive: {archived:?} vs {record:?}");
        }
    }
    Ok(Replay {
        trajectory: Trajectory {
            policy: policy.to_string(),
            delta,
            replication: rep,
            rows,
        },
        record,
    })
}
