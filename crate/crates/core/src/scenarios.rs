//! Simulation universes and the hidden-truth stream generator.
//!
//! A scenario fixes a mode bank (block shifts, overlapping spline bumps, or
//! a bank loaded from file) plus the post-change law. The generator derives
//! every value from a counter-based hash of `(seed, t, j)`, so a coordinate
//! is only ever computed when someone asks for it, and two policies run on
//! the same seed see the same numbers.

use std::f64::consts::TAU;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{GaussianModel, ModeBank, ModelError};
use crate::seeds::{derive_seed, splitmix64, tag, unit_open};

/// Change time meaning "never": the stream stays in control.
pub const NEVER: u64 = u64::MAX;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("p = {p} is not divisible by K = {k}")]
    Indivisible { p: usize, k: usize },
    #[error("need at least 3 quadratic basis functions per axis, got {0}")]
    TooFewKnots(usize),
    #[error("true mode {mode} out of range for K = {k}")]
    TrueModeRange { mode: usize, k: usize },
    #[error("{count} true modes requested from a bank of {k}")]
    TrueModeCount { count: usize, k: usize },
    #[error("single-mode mixing needs exactly one true mode, got {0}")]
    SingleNeedsOne(usize),
    #[error("change magnitude must be finite and >= 0, got {0}")]
    BadDelta(f64),
    #[error("custom scenarios need a bank file")]
    MissingBankFile,
    #[error("need at least 2 samples per coordinate to fit a model, got {0}")]
    TooFewSamples(usize),
    #[error("sample rows have inconsistent length")]
    RaggedSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bank file: {0}")]
    Io(#[from] io::Error),
    #[error("bank file: {0}")]
    Json(#[from] serde_json::Error),
}

/// How post-change data is generated when several modes are true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    /// Exactly one true mode.
    #[default]
    Single,
    /// Each tick draws from one true mode chosen uniformly.
    PerTickUniform,
    /// Every true mode's mean shift is applied at once, base covariance kept.
    Superposed,
}

/// Which mode bank a scenario uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankSpec {
    /// `modes` contiguous blocks of `p / modes` coordinates, each shifted by `delta`.
    Nonoverlap { p: usize, modes: usize },
    /// Tensor-product quadratic B-spline bumps on a `rows x cols` image.
    Overlap { rows: usize, cols: usize, knots: usize },
    /// Bank read from a JSON file; `delta` is ignored.
    Custom { bank_file: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub bank: BankSpec,
    pub delta: f64,
    /// Last in-control tick; `0` means the change is in effect from `t = 1`.
    #[serde(default)]
    pub change_time: u64,
    /// Fixed true modes. When empty, `true_mode_count` distinct modes are
    /// drawn uniformly per replication.
    #[serde(default)]
    pub true_modes: Vec<usize>,
    #[serde(default = "one")]
    pub true_mode_count: usize,
    #[serde(default)]
    pub mixing: Mixing,
}

fn one() -> usize {
    1
}

impl ScenarioSpec {
    pub fn nonoverlap(p: usize, modes: usize, delta: f64) -> Self {
        Self {
            bank: BankSpec::Nonoverlap { p, modes },
            delta,
            change_time: 0,
            true_modes: Vec::new(),
            true_mode_count: 1,
            mixing: Mixing::Single,
        }
    }

    pub fn overlap(rows: usize, cols: usize, knots: usize, delta: f64) -> Self {
        Self {
            bank: BankSpec::Overlap { rows, cols, knots },
            ..Self::nonoverlap(0, 1, delta)
        }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    pub fn build_bank(&self) -> Result<ModeBank, ScenarioError> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(ScenarioError::BadDelta(self.delta));
        }
        let bank = match &self.bank {
            BankSpec::Nonoverlap { p, modes } => build_nonoverlap(*p, *modes, self.delta)?,
            BankSpec::Overlap { rows, cols, knots } => build_overlap(*rows, *cols, *knots, self.delta)?,
            BankSpec::Custom { bank_file } => load_bank(bank_file.as_ref().ok_or(ScenarioError::MissingBankFile)?)?,
        };
        self.validate_modes(bank.len())?;
        Ok(bank)
    }

    fn validate_modes(&self, k: usize) -> Result<(), ScenarioError> {
        if let Some(&mode) = self.true_modes.iter().find(|&&m| m >= k) {
            return Err(ScenarioError::TrueModeRange { mode, k });
        }
        let count = self.mode_count();
        if count == 0 || count > k {
            return Err(ScenarioError::TrueModeCount { count, k });
        }
        if self.mixing == Mixing::Single && count != 1 {
            return Err(ScenarioError::SingleNeedsOne(count));
        }
        Ok(())
    }

    fn mode_count(&self) -> usize {
        if self.true_modes.is_empty() {
            self.true_mode_count
        } else {
            self.true_modes.len()
        }
    }

    /// True modes for one replication.
    pub fn true_modes_for(&self, k: usize, data_seed: u64) -> Vec<usize> {
        if !self.true_modes.is_empty() {
            return self.true_modes.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data_seed, &[tag("true-modes")]));
        let mut modes = rand::seq::index::sample(&mut rng, k, self.true_mode_count).into_vec();
        modes.sort_unstable();
        modes
    }

    /// Post-change stream for one replication.
    pub fn stream(&self, bank: Arc<ModeBank>, data_seed: u64) -> StreamGenerator {
        let modes = self.true_modes_for(bank.len(), data_seed);
        StreamGenerator::new(bank, data_seed, self.change_time, modes, self.mixing)
    }
}

/// Block-shift bank: base `N(0, I_p)`, mode `k` adds `delta` on
/// `[k * p / K, (k + 1) * p / K)`.
pub fn build_nonoverlap(p: usize, k: usize, delta: f64) -> Result<ModeBank, ScenarioError> {
    if k == 0 || !p.is_multiple_of(k) {
        return Err(ScenarioError::Indivisible { p, k });
    }
    let block = p / k;
    let modes = (0..k)
        .map(|m| {
            let mut mean = vec![0.0; p];
            mean[m * block..(m + 1) * block].fill(delta);
            GaussianModel::diagonal(mean, vec![1.0; p])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = (0..k).map(|m| format!("block-{m}")).collect();
    Ok(ModeBank::new(GaussianModel::standard(p), modes, labels)?)
}

/// Open uniform knot vector for `n` quadratic basis functions on `[0, 1]`.
fn open_uniform_knots(n: usize) -> Vec<f64> {
    let interior = n - 2;
    let mut knots = vec![0.0; 3];
    knots.extend((1..interior).map(|i| i as f64 / interior as f64));
    knots.extend([1.0; 3]);
    knots
}

/// Cox–de Boor recursion for basis function `i` of degree `degree` at `u`.
fn bspline(knots: &[f64], i: usize, degree: usize, u: f64) -> f64 {
    if degree == 0 {
        return if knots[i] <= u && u < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let left = knots[i + degree] - knots[i];
    if left > 0.0 {
        v += (u - knots[i]) / left * bspline(knots, i, degree - 1, u);
    }
    let right = knots[i + degree + 1] - knots[i + 1];
    if right > 0.0 {
        v += (knots[i + degree + 1] - u) / right * bspline(knots, i + 1, degree - 1, u);
    }
    v
}

/// `n` quadratic basis functions evaluated at the centers of `len` pixels.
pub fn bspline_basis(n: usize, len: usize) -> Vec<Vec<f64>> {
    let knots = open_uniform_knots(n);
    (0..n)
        .map(|i| {
            (0..len)
                .map(|c| bspline(&knots, i, 2, (c as f64 + 0.5) / len as f64))
                .collect()
        })
        .collect()
}

/// Spline-bump bank on a `rows x cols` image (row-major pixels). Mode
/// `a * knots + b` is the product of row basis `a` and column basis `b`,
/// scaled so its largest shift is exactly `delta`.
pub fn build_overlap(rows: usize, cols: usize, knots: usize, delta: f64) -> Result<ModeBank, ScenarioError> {
    if knots < 3 {
        return Err(ScenarioError::TooFewKnots(knots));
    }
    let p = rows * cols;
    let by_row = bspline_basis(knots, rows);
    let by_col = bspline_basis(knots, cols);
    let mut modes = Vec::with_capacity(knots * knots);
    let mut labels = Vec::with_capacity(knots * knots);
    for a in 0..knots {
        for b in 0..knots {
            let bump: Vec<f64> = (0..p).map(|i| by_row[a][i / cols] * by_col[b][i % cols]).collect();
            let peak = bump.iter().copied().fold(0.0, f64::max);
            let mean = bump
                .iter()
                .map(|&v| if peak > 0.0 { delta * (v / peak) } else { 0.0 })
                .collect();
            modes.push(GaussianModel::diagonal(mean, vec![1.0; p])?);
            labels.push(format!("bump-{a}-{b}"));
        }
    }
    Ok(ModeBank::new(GaussianModel::standard(p), modes, labels)?)
}

/// On-disk bank layout: diagonal Gaussians only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    pub base: DiagonalEntry,
    pub modes: Vec<LabeledEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalEntry {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub label: String,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

impl BankFile {
    pub fn into_bank(self) -> Result<ModeBank, ScenarioError> {
        let base = GaussianModel::diagonal(self.base.mean, self.base.variances)?;
        let mut modes = Vec::with_capacity(self.modes.len());
        let mut labels = Vec::with_capacity(self.modes.len());
        for m in self.modes {
            modes.push(GaussianModel::diagonal(m.mean, m.variances)?);
            labels.push(m.label);
        }
        Ok(ModeBank::new(base, modes, labels)?)
    }

    /// Diagonal part of a bank (full covariances keep only their variances).
    pub fn from_bank(bank: &ModeBank) -> Self {
        let entry = |m: &GaussianModel| DiagonalEntry {
            mean: m.mean().to_vec(),
            variances: (0..m.dim()).map(|j| m.covariance().variance(j)).collect(),
        };
        Self {
            base: entry(bank.base()),
            modes: bank
                .modes()
                .iter()
                .zip(bank.labels())
                .map(|(m, label)| {
                    let e = entry(m);
                    LabeledEntry {
                        label: label.clone(),
                        mean: e.mean,
                        variances: e.variances,
                    }
                })
                .collect(),
        }
    }
}

pub fn load_bank(path: &Path) -> Result<ModeBank, ScenarioError> {
    let file: BankFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.into_bank()
}

pub fn save_bank(bank: &ModeBank, path: &Path) -> Result<(), ScenarioError> {
    fs::write(path, serde_json::to_string_pretty(&BankFile::from_bank(bank))?)?;
    Ok(())
}

/// Smallest variance a fitted coordinate may have.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-coordinate sample mean and (unbiased) variance, floored.
pub fn fit_diagonal(samples: &[Vec<f64>]) -> Result<GaussianModel, ScenarioError> {
    let n = samples.len();
    if n < 2 {
        return Err(ScenarioError::TooFewSamples(n));
    }
    let p = samples[0].len();
    if samples.iter().any(|s| s.len() != p) {
        return Err(ScenarioError::RaggedSamples);
    }
    let mut mean = vec![0.0; p];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut()
        .for_each(|v| *v = (*v / (n - 1) as f64).max(VARIANCE_FLOOR));
    Ok(GaussianModel::diagonal(mean, var)?)
}

/// Bank estimated from labelled sample sets: in-control rows plus one set
/// of rows per failure mode.
pub fn fit_bank_from_samples(
    in_control: &[Vec<f64>],
    modes: &[(String, Vec<Vec<f64>>)],
) -> Result<ModeBank, ScenarioError> {
    let base = fit_diagonal(in_control)?;
    let fitted = modes
        .iter()
        .map(|(_, rows)| fit_diagonal(rows))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = modes.iter().map(|(l, _)| l.clone()).collect();
    Ok(ModeBank::new(base, fitted, labels)?)
}

/// One tick of the hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTick {
    pub time: u64,
    pub full_x: Vec<f64>,
    /// Mode generating this tick; `None` before the change or when superposed.
    pub active_mode: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Law {
    Base,
    Mode(usize),
    Superposed,
}

/// Seeded, lazily evaluated data stream.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    bank: Arc<ModeBank>,
    seed: u64,
    change_time: u64,
    true_modes: Vec<usize>,
    mixing: Mixing,
    diagonal: bool,
    /// Last full vector computed for correlated banks.
    full_cache: Option<(u64, Vec<f64>)>,
}

const COORD_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const MIX_SALT: u64 = 0x8CB9_2BA7_2F3D_8DD7;

impl StreamGenerator {
    pub fn new(bank: Arc<ModeBank>, seed: u64, change_time: u64, true_modes: Vec<usize>, mixing: Mixing) -> Self {
        let diagonal = bank.base().is_diagonal() && bank.modes().iter().all(GaussianModel::is_diagonal);
        Self {
            bank,
            seed,
            change_time,
            true_modes,
            mixing,
            diagonal,
            full_cache: None,
        }
    }

    /// In-control stream.
    pub fn null(bank: Arc<ModeBank>, seed: u64) -> Self {
        Self::new(bank, seed, NEVER, Vec::new(), Mixing::Single)
    }

    pub fn bank(&self) -> &ModeBank {
        &self.bank
    }

    pub fn true_modes(&self) -> &[usize] {
        &self.true_modes
    }

    pub fn change_time(&self) -> u64 {
        self.change_time
    }

    fn tick_key(&self, t: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(t))
    }

    /// Standard normal for coordinate `j` at the tick with key `key`.
    #[inline]
    fn normal(key: u64, j: usize) -> f64 {
        let h = splitmix64(key ^ (j as u64).wrapping_mul(COORD_SALT));
        let u1 = unit_open(h);
        let u2 = unit_open(splitmix64(h));
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    fn law(&self, t: u64) -> Law {
        if t <= self.change_time || self.true_modes.is_empty() {
            return Law::Base;
        }
        match self.mixing {
            Mixing::Single => Law::Mode(self.true_modes[0]),
            Mixing::PerTickUniform => {
                let u = unit_open(splitmix64(self.tick_key(t) ^ MIX_SALT));
                let i = ((u * self.true_modes.len() as f64) as usize).min(self.true_modes.len() - 1);
                Law::Mode(self.true_modes[i])
            }
            Mixing::Superposed => Law::Superposed,
        }
    }

    /// Mode generating tick `t`, if a single one does.
    pub fn active_mode(&self, t: u64) -> Option<usize> {
        match self.law(t) {
            Law::Mode(k) => Some(k),
            _ => None,
        }
    }

    fn superposed_mean(&self, j: usize) -> f64 {
        let base = self.bank.base().mean()[j];
        base + self
            .true_modes
            .iter()
            .map(|&k| self.bank.mode(k).mean()[j] - base)
            .sum::<f64>()
    }

    fn full_vector(&self, t: u64) -> Vec<f64> {
        let key = self.tick_key(t);
        let z: Vec<f64> = (0..self.bank.dim()).map(|j| Self::normal(key, j)).collect();
        match self.law(t) {
            Law::Base => self.bank.base().from_standard(&z),
            Law::Mode(k) => self.bank.mode(k).from_standard(&z),
            Law::Superposed => {
                let mut x = self.bank.base().from_standard(&z);
                for (j, v) in x.iter_mut().enumerate() {
                    *v += self.superposed_mean(j) - self.bank.base().mean()[j];
                }
                x
            }
        }
    }

    /// Values of coordinates `indices` at tick `t`.
    pub fn read(&mut self, t: u64, indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        if !self.diagonal {
            if self.full_cache.as_ref().is_none_or(|(ct, _)| *ct != t) {
                self.full_cache = Some((t, self.full_vector(t)));
            }
            let x = &self.full_cache.as_ref().expect("just filled").1;
            out.extend(indices.iter().map(|&j| x[j]));
            return;
        }
        let key = self.tick_key(t);
        let law = self.law(t);
        let base = self.bank.base();
        out.extend(indices.iter().map(|&j| {
            let z = Self::normal(key, j);
            match law {
                Law::Base => base.mean()[j] + base.covariance().variance(j).sqrt() * z,
                Law::Mode(k) => {
                    let m = self.bank.mode(k);
                    m.mean()[j] + m.covariance().variance(j).sqrt() * z
                }
                Law::Superposed => self.superposed_mean(j) + base.covariance().variance(j).sqrt() * z,
            }
        }));
    }

    /// The whole vector at tick `t`. Only for tests and fully observing policies.
    pub fn tick(&mut self, t: u64) -> StreamTick {
        let all: Vec<usize> = (0..self.bank.dim()).collect();
        let mut full_x = Vec::with_capacity(all.len());
        self.read(t, &all, &mut full_x);
        StreamTick {
            time: t,
            full_x,
            active_mode: self.active_mode(t),
        }
    }
}

/// Record of which coordinates were read at which tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessLog {
    pub entries: Vec<(u64, Vec<usize>)>,
}

impl AccessLog {
    /// Read counts per coordinate over ticks in `from..=to`.
    pub fn histogram(&self, p: usize, from: u64, to: u64) -> Vec<u64> {
        let mut counts = vec![0u64; p];
        for (t, idx) in &self.entries {
            if (from..=to).contains(t) {
                for &j in idx {
                    counts[j] += 1;
                }
            }
        }
        counts
    }
}

/// The only path from a stream to a policy: hands out requested
/// coordinates and can log every read.
#[derive(Debug, Clone)]
pub struct ObservationGate {
    stream: StreamGenerator,
    log: Option<AccessLog>,
}

impl ObservationGate {
    pub fn new(stream: StreamGenerator, logging: bool) -> Self {
        Self {
            stream,
            log: logging.then(AccessLog::default),
        }
    }

    pub fn read(&mut self, t: u64, indices: &[usize], out: &mut Vec<f64>) {
        if let Some(log) = self.log.as_mut() {
            log.entries.push((t, indices.to_vec()));
        }
        self.stream.read(t, indices, out);
    }

    pub fn stream(&self) -> &StreamGenerator {
        &self.stream
    }

    pub fn log(&self) -> Option<&AccessLog> {
        self.log.as_ref()
    }

    pub fn into_log(self) -> Option<AccessLog> {
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonoverlap_blocks() {
        let bank = build_nonoverlap(1000, 50, 0.8).unwrap();
        assert_eq!(bank.len(), 50);
        assert_eq!(bank.support(0), (0..20).collect::<Vec<_>>().as_slice());
        assert_eq!(bank.support(49), (980..1000).collect::<Vec<_>>().as_slice());
        for a in 0..50 {
            for b in (a + 1)..50 {
                assert!(bank.support(a).iter().all(|j| !bank.support(b).contains(j)));
            }
        }
    }

    #[test]
    fn nonoverlap_errors() {
        assert!(matches!(
            build_nonoverlap(1000, 30, 0.8),
            Err(ScenarioError::Indivisible { .. })
        ));
        assert!(matches!(
            build_nonoverlap(100, 5, 0.0),
            Err(ScenarioError::Model(ModelError::ModeEqualsBase { .. }))
        ));
    }

    #[test]
    fn basis_partition_of_unity() {
        let basis = bspline_basis(7, 30);
        for c in 0..30 {
            let s: f64 = basis.iter().map(|b| b[c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_structure() {
        let bank = build_overlap(30, 30, 7, 0.8).unwrap();
        assert_eq!(bank.len(), 49);
        assert_eq!(bank.dim(), 900);
        for m in bank.modes() {
            let peak = m.mean().iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(peak, 0.8);
            assert!(m.mean().iter().all(|&v| (0.0..=0.8).contains(&v)));
        }
        let dot = |a: usize, b: usize| -> f64 {
            bank.mode(a)
                .mean()
                .iter()
                .zip(bank.mode(b).mean())
                .map(|(x, y)| x * y)
                .sum()
        };
        let id = |a: usize, b: usize| a * 7 + b;
        assert!(dot(id(2, 2), id(2, 3)) > 0.0);
        assert!(dot(id(2, 2), id(3, 2)) > 0.0);
        assert!(dot(id(3, 3), id(4, 4)) > 0.0);
        assert_eq!(dot(id(0, 0), id(0, 3)), 0.0);
        assert_eq!(dot(id(1, 2), id(4, 2)), 0.0);
        assert_eq!(dot(id(0, 0), id(6, 6)), 0.0);
    }

    #[test]
    fn custom_bank_round_trip() {
        let bank = build_nonoverlap(6, 3, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        save_bank(&bank, &path).unwrap();
        let back = load_bank(&path).unwrap();
        assert_eq!(back.modes(), bank.modes());
        assert_eq!(back.labels(), bank.labels());
        let spec = ScenarioSpec {
            bank: BankSpec::Custom { bank_file: Some(path) },
            ..ScenarioSpec::nonoverlap(6, 3, 0.5)
        };
        assert_eq!(spec.build_bank().unwrap().len(), 3);
    }

    #[test]
    fn fit_applies_variance_floor() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 6.0]];
        let m = fit_diagonal(&rows).unwrap();
        assert_eq!(m.mean(), &[1.0, 4.0]);
        assert_eq!(m.covariance().variance(0), VARIANCE_FLOOR);
        assert!((m.covariance().variance(1) - 4.0).abs() < 1e-12);
        assert!(fit_diagonal(&rows[..1]).is_err());
    }

    fn stream(mixing: Mixing, modes: Vec<usize>, change: u64) -> StreamGenerator {
        let bank = Arc::new(build_nonoverlap(12, 3, 0.8).unwrap());
        StreamGenerator::new(bank, 77, change, modes, mixing)
    }

    #[test]
    fn never_change_is_in_control() {
        let bank = Arc::new(build_nonoverlap(12, 3, 0.8).unwrap());
        let mut g = StreamGenerator::null(bank, 3);
        for t in 1..500 {
            assert_eq!(g.tick(t).active_mode, None);
        }
    }

    #[test]
    fn reads_are_coordinate_consistent() {
        let mut g = stream(Mixing::Single, vec![1], 0);
        let mut a = Vec::new();
        let mut b = Vec::new();
        g.read(5, &[2, 4, 7], &mut a);
        g.read(5, &[7], &mut b);
        assert_eq!(a[2], b[0]);
        let full = g.tick(5).full_x;
        assert_eq!(full[4], a[1]);
    }

    #[test]
    fn single_mode_mean() {
        let mut g = stream(Mixing::Single, vec![1], 10);
        let n = 10_000;
        let mut sum = [0.0; 2];
        let mut out = Vec::new();
        for t in 11..11 + n {
            g.read(t, &[4, 0], &mut out);
            sum[0] += out[0];
            sum[1] += out[1];
        }
        let se = 1.0 / (n as f64).sqrt();
        assert!((sum[0] / n as f64 - 0.8).abs() < 3.0 * se);
        assert!((sum[1] / n as f64).abs() < 3.0 * se);
    }

    #[test]
    fn per_tick_mixing_frequencies() {
        let g = stream(Mixing::PerTickUniform, vec![0, 1, 2], 0);
        let n = 30_000;
        let mut counts = [0u32; 3];
        for t in 1..=n {
            counts[g.active_mode(t).unwrap()] += 1;
        }
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 3.0 * se);
        }
    }

    #[test]
    fn superposed_adds_shifts() {
        let mut g = stream(Mixing::Superposed, vec![0, 2], 0);
        let n = 10_000;
        let mut sum = [0.0; 3];
        let mut out = Vec::new();
        for t in 1..=n {
            g.read(t, &[0, 4, 8], &mut out);
            for i in 0..3 {
                sum[i] += out[i];
            }
        }
        let se = 1.0 / (n as f64).sqrt();
        assert!((sum[0] / n as f64 - 0.8).abs() < 3.0 * se);
        assert!((sum[1] / n as f64).abs() < 3.0 * se);
        assert!((sum[2] / n as f64 - 0.8).abs() < 3.0 * se);
    }

    #[test]
    fn hashed_normals_are_standard() {
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = StreamGenerator::normal(splitmix64(i as u64), (i % 97) as usize);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn true_modes_are_distinct_and_seeded() {
        let spec = ScenarioSpec {
            true_mode_count: 3,
            mixing: Mixing::PerTickUniform,
            ..ScenarioSpec::nonoverlap(1000, 50, 0.8)
        };
        let a = spec.true_modes_for(50, 9);
        assert_eq!(a, spec.true_modes_for(50, 9));
        assert_eq!(a.len(), 3);
        assert!(a[0] < a[1] && a[1] < a[2]);
        assert!(spec.build_bank().is_ok());
        let bad = ScenarioSpec {
            mixing: Mixing::Single,
            ..spec
        };
        assert!(matches!(bad.build_bank(), Err(ScenarioError::SingleNeedsOne(3))));
    }

    #[test]
    fn gate_logs_reads() {
        let mut gate = ObservationGate::new(stream(Mixing::Single, vec![0], 0), true);
        let mut out = Vec::new();
        gate.read(1, &[0, 3], &mut out);
        gate.read(2, &[5], &mut out);
        let log = gate.into_log().unwrap();
        assert_eq!(log.entries, vec![(1, vec![0, 3]), (2, vec![5])]);
        assert_eq!(log.histogram(12, 1, 1)[3], 1);
    }

    #[test]
    fn spec_toml_shape() {
        let text = r#"
            kind = "nonoverlap"
            p = 1000
            modes = 50
            delta = 0.8
            true_mode_count = 3
            mixing = "per_tick_uniform"
        "#;
        let spec: ScenarioSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.bank, BankSpec::Nonoverlap { p: 1000, modes: 50 });
        assert_eq!(spec.mixing, Mixing::PerTickUniform);
        assert_eq!(spec.change_time, 0);
    }
}
