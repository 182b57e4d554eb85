//! Benchmark configuration: one TOML document covering the scenario, the
//! policies, calibration and output.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mtssrp::calibrate::CalibrationSpec;
use mtssrp::policy::PolicySpec;
use mtssrp::scenarios::ScenarioSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A policy entry; `label` names it in the outputs and defaults to its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub spec: PolicySpec,
}

impl PolicyEntry {
    pub fn new(spec: PolicySpec) -> Self {
        Self { label: None, spec }
    }

    pub fn labeled(label: &str, spec: PolicySpec) -> Self {
        Self {
            label: Some(label.to_string()),
            spec,
        }
    }

    pub fn name(&self) -> &str {
        self.label.as_deref().unwrap_or(self.spec.kind())
    }
}

/// Threshold calibration settings shared by every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub replications: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: u32,
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_iterations() -> u32 {
    20
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            replications: 1000,
            tolerance: default_tolerance(),
            max_iterations: default_iterations(),
        }
    }
}

/// Where results go. None of these fields affect the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputSettings {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Calibration cache; defaults to `calibration.json` in `dir`.
    #[serde(default)]
    pub calibration_cache: Option<PathBuf>,
    /// Replications whose per-tick trajectories are written.
    #[serde(default)]
    pub trajectories: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub master_seed: u64,
    #[serde(default = "default_arl0")]
    pub target_arl0: f64,
    pub replications: u64,
    /// Tick cap per run; defaults to ten times the target ARL0.
    #[serde(default)]
    pub horizon: Option<u64>,
    pub delta_grid: Vec<f64>,
    pub scenario: ScenarioSpec,
    pub policies: Vec<PolicyEntry>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    /// Worker threads; `0` uses every core. Never changes results.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output: OutputSettings,
}

fn default_arl0() -> f64 {
    200.0
}

/// The fields that determine results; hashed for archives and caches.
#[derive(Serialize)]
struct Semantic<'a> {
    master_seed: u64,
    target_arl0: f64,
    replications: u64,
    horizon: u64,
    delta_grid: &'a [f64],
    scenario: &'a ScenarioSpec,
    policies: &'a [PolicyEntry],
    calibration: &'a CalibrationSettings,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).context("parsing benchmark config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn horizon(&self) -> u64 {
        self.horizon.unwrap_or_else(|| (10.0 * self.target_arl0).ceil() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            bail!("replications must be at least 1");
        }
        if self.delta_grid.is_empty() {
            bail!("delta_grid must not be empty");
        }
        if self.policies.is_empty() {
            bail!("at least one policy is required");
        }
        if !(self.target_arl0 > 1.0 && self.target_arl0.is_finite()) {
            bail!("target_arl0 must exceed 1, got {}", self.target_arl0);
        }
        if self.horizon() == 0 {
            bail!("horizon must be positive");
        }
        let mut names: Vec<&str> = self.policies.iter().map(PolicyEntry::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("duplicate policy label {:?}", w[0]);
        }
        self.calibration_spec().validate()?;
        for &delta in &self.delta_grid {
            let scenario = self.scenario.with_delta(delta);
            let bank = scenario
                .build_bank()
                .with_context(|| format!("scenario at delta {delta}"))?;
            for entry in &self.policies {
                entry
                    .spec
                    .validate(&bank, delta)
                    .with_context(|| format!("policy {} at delta {delta}", entry.name()))?;
            }
        }
        Ok(())
    }

    pub fn calibration_spec(&self) -> CalibrationSpec {
        CalibrationSpec {
            tolerance: self.calibration.tolerance,
            max_iterations: self.calibration.max_iterations,
            ..CalibrationSpec::new(self.target_arl0, self.calibration.replications)
        }
    }

    /// Hex SHA-256 of the result-determining fields.
    pub fn semantic_hash(&self) -> String {
        let semantic = Semantic {
            master_seed: self.master_seed,
            target_arl0: self.target_arl0,
            replications: self.replications,
            horizon: self.horizon(),
            delta_grid: &self.delta_grid,
            scenario: &self.scenario,
            policies: &self.policies,
            calibration: &self.calibration,
        };
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.output
            .calibration_cache
            .clone()
            .unwrap_or_else(|| self.out_dir().join("calibration.json"))
    }
}
