//! Gaussian models, marginalization onto observed coordinates, and
//! log-likelihood ratios between failure modes and the in-control model.
//!
//! A [`GaussianModel`] carries either a diagonal or a full covariance. The
//! marginal of a Gaussian on a coordinate subset is the Gaussian of the
//! sub-vector and sub-block, so evaluating a partially observed vector only
//! needs the observed indices.
//!
//! For banks whose models are all diagonal, [`ModeBank`] precomputes one
//! [`CoordLlr`] per (mode, coordinate) pair where the mode differs from the
//! base. Coordinates where they agree contribute exactly zero and are skipped.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

const MARGINAL_CACHE_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("mean has length {mean} but covariance has dimension {cov}")]
    DimensionMismatch { mean: usize, cov: usize },
    #[error("variance at coordinate {index} is {value}; variances must be finite and > 0")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error("covariance is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite mean at coordinate {index}")]
    NonFiniteMean { index: usize },
    #[error("a mode bank needs at least one failure mode")]
    EmptyBank,
    #[error("mode {index} has dimension {dim}, base has dimension {base}")]
    ModeDimension { index: usize, dim: usize, base: usize },
    #[error("mode {index} is identical to the base model")]
    ModeEqualsBase { index: usize },
    #[error("{labels} labels given for {modes} modes")]
    LabelCount { labels: usize, modes: usize },
    #[error("mode index {index} out of range for {count} modes")]
    ModeOutOfRange { index: usize, count: usize },
    #[error("observation index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("observation indices must be strictly increasing")]
    UnsortedIndices,
    #[error("observation has {indices} indices but {values} values")]
    LengthMismatch { indices: usize, values: usize },
}

/// Covariance structure of a [`GaussianModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
    /// Dense symmetric positive-definite matrix.
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            Covariance::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Covariance::Full(m) => m[(i, j)],
        }
    }

    #[inline]
    pub fn variance(&self, j: usize) -> f64 {
        self.entry(j, j)
    }
}

/// Cholesky factor of a covariance sub-block.
struct SubFactor {
    lower: DMatrix<f64>,
    /// Sum of the log diagonal of `lower`, i.e. half the log-determinant.
    half_log_det: f64,
}

type MarginalCache = Mutex<LruCache<Vec<usize>, Arc<SubFactor>>>;

/// A p-dimensional Gaussian.
#[derive(Clone)]
pub struct GaussianModel {
    mean: Vec<f64>,
    cov: Covariance,
    /// Lower Cholesky factor of the full covariance, when full.
    chol: Option<DMatrix<f64>>,
    cache: Arc<MarginalCache>,
}

impl fmt::Debug for GaussianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianModel")
            .field("mean", &self.mean)
            .field("cov", &self.cov)
            .finish()
    }
}

impl PartialEq for GaussianModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

fn check_mean(mean: &[f64]) -> Result<(), ModelError> {
    match mean.iter().position(|m| !m.is_finite()) {
        Some(index) => Err(ModelError::NonFiniteMean { index }),
        None => Ok(()),
    }
}

/// Cholesky with an explicit pivot check; nalgebra's own factorization
/// accepts some matrices with tiny negative pivots as zero.
fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

impl GaussianModel {
    fn with_cov(mean: Vec<f64>, cov: Covariance, chol: Option<DMatrix<f64>>) -> Self {
        let cap = NonZeroUsize::new(MARGINAL_CACHE_CAPACITY).expect("nonzero capacity");
        Self {
            mean,
            cov,
            chol,
            cache: Arc::new(Mutex::new(LruCache::new(cap))),
        }
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self, ModelError> {
        if mean.len() != variances.len() {
            return Err(ModelError::DimensionMismatch {
                mean: mean.len(),
                cov: variances.len(),
            });
        }
        check_mean(&mean)?;
        if let Some(index) = variances.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ModelError::NonPositiveVariance {
                index,
                value: variances[index],
            });
        }
        Ok(Self::with_cov(mean, Covariance::Diagonal(variances), None))
    }

    /// Standard normal `N(0, I_p)`.
    pub fn standard(p: usize) -> Self {
        Self::diagonal(vec![0.0; p], vec![1.0; p]).expect("unit variances are valid")
    }

    pub fn full(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, ModelError> {
        if cov.nrows() != cov.ncols() || mean.len() != cov.nrows() {
            return Err(ModelError::DimensionMismatch {
                mean: mean.len(),
                cov: cov.nrows().max(cov.ncols()),
            });
        }
        check_mean(&mean)?;
        let n = cov.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (cov[(i, j)], cov[(j, i)]);
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(ModelError::NotSymmetric { row: i, col: j });
                }
            }
        }
        let chol = cholesky_lower(&cov).ok_or(ModelError::NotPositiveDefinite)?;
        Ok(Self::with_cov(mean, Covariance::Full(cov), Some(chol)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.cov, Covariance::Diagonal(_))
    }

    fn sub_factor(&self, indices: &[usize]) -> Arc<SubFactor> {
        let mut cache = self.cache.lock().expect("marginal cache poisoned");
        if let Some(f) = cache.get(indices) {
            return Arc::clone(f);
        }
        let n = indices.len();
        let block = DMatrix::from_fn(n, n, |a, b| self.cov.entry(indices[a], indices[b]));
        // A principal sub-block of an SPD matrix is SPD; this cannot fail for
        // a model that passed construction.
        let lower = cholesky_lower(&block).expect("principal sub-block of an SPD matrix");
        let half_log_det = (0..n).map(|i| lower[(i, i)].ln()).sum();
        let f = Arc::new(SubFactor { lower, half_log_det });
        cache.put(indices.to_vec(), Arc::clone(&f));
        f
    }

    /// Log-density of the marginal on `indices` evaluated at `values`.
    ///
    /// Indices must be in range and aligned with `values`; use
    /// [`GaussianModel::marginal_log_density`] for a checked entry point.
    pub fn log_density_at(&self, indices: &[usize], values: &[f64]) -> f64 {
        debug_assert_eq!(indices.len(), values.len());
        if indices.is_empty() {
            return 0.0;
        }
        match &self.cov {
            Covariance::Diagonal(var) => indices
                .iter()
                .zip(values)
                .map(|(&j, &x)| {
                    let d = x - self.mean[j];
                    -0.5 * (LN_2PI + var[j].ln()) - d * d / (2.0 * var[j])
                })
                .sum(),
            Covariance::Full(_) => {
                let f = self.sub_factor(indices);
                let n = indices.len();
                // forward substitution L z = x - mu
                let mut z = vec![0.0; n];
                for i in 0..n {
                    let mut s = values[i] - self.mean[indices[i]];
                    for k in 0..i {
                        s -= f.lower[(i, k)] * z[k];
                    }
                    z[i] = s / f.lower[(i, i)];
                }
                let quad: f64 = z.iter().map(|v| v * v).sum();
                -0.5 * n as f64 * LN_2PI - f.half_log_det - 0.5 * quad
            }
        }
    }

    /// Checked log-density of the observed sub-vector.
    pub fn marginal_log_density(&self, obs: &Observation) -> Result<f64, ModelError> {
        obs.check_dim(self.dim())?;
        Ok(self.log_density_at(&obs.indices, &obs.values))
    }

    /// One draw from the model.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.from_standard(&z)
    }

    /// `mean + L z` for a standard normal vector `z`, where `L` is the
    /// covariance square root (elementwise for diagonal models).
    pub fn from_standard(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.dim());
        match &self.cov {
            Covariance::Diagonal(var) => self
                .mean
                .iter()
                .zip(var)
                .zip(z)
                .map(|((m, v), z)| m + v.sqrt() * z)
                .collect(),
            Covariance::Full(_) => {
                let l = self.chol.as_ref().expect("full covariance carries its factor");
                (0..self.dim())
                    .map(|i| self.mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
                    .collect()
            }
        }
    }
}

/// A partially observed vector: values at strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: u64,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(time: u64, indices: Vec<usize>, values: Vec<f64>) -> Result<Self, ModelError> {
        if indices.len() != values.len() {
            return Err(ModelError::LengthMismatch {
                indices: indices.len(),
                values: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnsortedIndices);
        }
        Ok(Self { time, indices, values })
    }

    /// Observation with no coordinates.
    pub fn empty(time: u64) -> Self {
        Self {
            time,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), ModelError> {
        match self.indices.last() {
            Some(&index) if index >= dim => Err(ModelError::IndexOutOfRange { index, dim }),
            _ => Ok(()),
        }
    }
}

/// Univariate Gaussian log-likelihood ratio `log N(x; mode) - log N(x; base)`.
///
/// Evaluated as `c + (B - A)` with `A`, `B` the mode and base quadratic
/// terms, so swapping the two models negates the result exactly and equal
/// parameters give exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordLlr {
    log_sd_ratio: f64,
    mode_mean: f64,
    mode_half_prec: f64,
    base_mean: f64,
    base_half_prec: f64,
}

impl CoordLlr {
    pub fn new(mode_mean: f64, mode_var: f64, base_mean: f64, base_var: f64) -> Self {
        Self {
            log_sd_ratio: 0.5 * (base_var.ln() - mode_var.ln()),
            mode_mean,
            mode_half_prec: 0.5 / mode_var,
            base_mean,
            base_half_prec: 0.5 / base_var,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let dm = x - self.mode_mean;
        let db = x - self.base_mean;
        self.log_sd_ratio + (db * db * self.base_half_prec - dm * dm * self.mode_half_prec)
    }

    pub fn mode_mean(&self) -> f64 {
        self.mode_mean
    }

    pub fn mode_var(&self) -> f64 {
        0.5 / self.mode_half_prec
    }
}

#[derive(Debug, Clone, Copy)]
struct CoordTerm {
    mode: usize,
    llr: CoordLlr,
}

/// Per-coordinate ratio tables, present when every model is diagonal.
#[derive(Debug, Clone)]
struct DiagonalTables {
    /// coordinate -> terms for the modes that differ from the base there
    by_coord: Vec<Vec<CoordTerm>>,
    /// mode -> (coordinate, term) over the mode's support, increasing
    by_mode: Vec<Vec<(usize, CoordLlr)>>,
}

/// The in-control model plus the K candidate failure modes.
#[derive(Debug, Clone)]
pub struct ModeBank {
    base: GaussianModel,
    modes: Vec<GaussianModel>,
    labels: Vec<String>,
    /// Coordinates whose marginal mean or variance differs from the base.
    supports: Vec<Vec<usize>>,
    tables: Option<DiagonalTables>,
}

impl ModeBank {
    pub fn new(base: GaussianModel, modes: Vec<GaussianModel>, labels: Vec<String>) -> Result<Self, ModelError> {
        if modes.is_empty() {
            return Err(ModelError::EmptyBank);
        }
        if labels.len() != modes.len() {
            return Err(ModelError::LabelCount {
                labels: labels.len(),
                modes: modes.len(),
            });
        }
        let p = base.dim();
        for (index, m) in modes.iter().enumerate() {
            if m.dim() != p {
                return Err(ModelError::ModeDimension {
                    index,
                    dim: m.dim(),
                    base: p,
                });
            }
            if *m == base {
                return Err(ModelError::ModeEqualsBase { index });
            }
        }
        let supports: Vec<Vec<usize>> = modes
            .iter()
            .map(|m| {
                (0..p)
                    .filter(|&j| m.mean[j] != base.mean[j] || m.cov.variance(j) != base.cov.variance(j))
                    .collect()
            })
            .collect();
        let all_diag = base.is_diagonal() && modes.iter().all(GaussianModel::is_diagonal);
        let tables = all_diag.then(|| {
            let mut by_coord = vec![Vec::new(); p];
            let mut by_mode = Vec::with_capacity(modes.len());
            for (k, (m, support)) in modes.iter().zip(&supports).enumerate() {
                let mut terms = Vec::with_capacity(support.len());
                for &j in support {
                    let llr = CoordLlr::new(m.mean[j], m.cov.variance(j), base.mean[j], base.cov.variance(j));
                    by_coord[j].push(CoordTerm { mode: k, llr });
                    terms.push((j, llr));
                }
                by_mode.push(terms);
            }
            DiagonalTables { by_coord, by_mode }
        });
        Ok(Self {
            base,
            modes,
            labels,
            supports,
            tables,
        })
    }

    /// Bank with default labels `mode_0 .. mode_{K-1}`.
    pub fn unlabeled(base: GaussianModel, modes: Vec<GaussianModel>) -> Result<Self, ModelError> {
        let labels = (0..modes.len()).map(|k| format!("mode_{k}")).collect();
        Self::new(base, modes, labels)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Number of failure modes K.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn base(&self) -> &GaussianModel {
        &self.base
    }

    pub fn mode(&self, k: usize) -> &GaussianModel {
        &self.modes[k]
    }

    pub fn modes(&self) -> &[GaussianModel] {
        &self.modes
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// True when the base and every mode have diagonal covariance.
    pub fn is_diagonal(&self) -> bool {
        self.tables.is_some()
    }

    /// Coordinates where mode `k`'s marginal mean or variance differs from the base.
    pub fn support(&self, k: usize) -> &[usize] {
        &self.supports[k]
    }

    /// Per-coordinate ratio terms of mode `k` over its support (diagonal banks only).
    pub fn coord_terms(&self, k: usize) -> Option<&[(usize, CoordLlr)]> {
        self.tables.as_ref().map(|t| t.by_mode[k].as_slice())
    }

    fn check_mode(&self, k: usize) -> Result<(), ModelError> {
        if k >= self.modes.len() {
            return Err(ModelError::ModeOutOfRange {
                index: k,
                count: self.modes.len(),
            });
        }
        Ok(())
    }

    /// `log f~_{C,k}(y) - log f~_{C,0}(y)` for an observation on index set `C`.
    pub fn log_likelihood_ratio(&self, k: usize, obs: &Observation) -> Result<f64, ModelError> {
        self.check_mode(k)?;
        obs.check_dim(self.dim())?;
        Ok(self.llr_at(k, &obs.indices, &obs.values))
    }

    /// Unchecked log-likelihood ratio of mode `k` on a sorted index set.
    pub fn llr_at(&self, k: usize, indices: &[usize], values: &[f64]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        match &self.tables {
            Some(t) => {
                let terms = &t.by_mode[k];
                // merge walk over two increasing index lists
                let mut acc = 0.0;
                let mut a = 0;
                let mut b = 0;
                while a < indices.len() && b < terms.len() {
                    let (j, llr) = terms[b];
                    match indices[a].cmp(&j) {
                        std::cmp::Ordering::Less => a += 1,
                        std::cmp::Ordering::Greater => b += 1,
                        std::cmp::Ordering::Equal => {
                            acc += llr.eval(values[a]);
                            a += 1;
                            b += 1;
                        }
                    }
                }
                acc
            }
            None => self.modes[k].log_density_at(indices, values) - self.base.log_density_at(indices, values),
        }
    }

    /// Log-likelihood ratios of every mode, written into `out` (length K).
    ///
    /// Produces the same values as calling [`ModeBank::llr_at`] per mode:
    /// for diagonal banks both accumulate the same terms in increasing
    /// coordinate order.
    pub fn all_llrs_into(&self, indices: &[usize], values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.tables {
            Some(t) => {
                for (&j, &x) in indices.iter().zip(values) {
                    for term in &t.by_coord[j] {
                        out[term.mode] += term.llr.eval(x);
                    }
                }
            }
            None => {
                if indices.is_empty() {
                    return;
                }
                let base = self.base.log_density_at(indices, values);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.modes[k].log_density_at(indices, values) - base;
                }
            }
        }
    }

    pub fn all_llrs(&self, obs: &Observation) -> Result<Vec<f64>, ModelError> {
        obs.check_dim(self.dim())?;
        let mut out = vec![0.0; self.len()];
        self.all_llrs_into(&obs.indices, &obs.values, &mut out);
        Ok(out)
    }

    /// One draw from failure mode `k`.
    pub fn sample_mode<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<f64>, ModelError> {
        self.check_mode(k)?;
        Ok(self.modes[k].sample(rng))
    }

    /// For each coordinate, the mode with the largest absolute mean shift
    /// there (lowest index on ties), or `None` if no mode shifts it.
    pub fn dominant_modes(&self) -> Vec<Option<usize>> {
        let p = self.dim();
        let mut best: Vec<Option<(usize, f64)>> = vec![None; p];
        for (k, m) in self.modes.iter().enumerate() {
            for &j in &self.supports[k] {
                let shift = (m.mean[j] - self.base.mean[j]).abs();
                match best[j] {
                    Some((_, s)) if s >= shift => {}
                    _ => best[j] = Some((k, shift)),
                }
            }
        }
        best.into_iter().map(|b| b.map(|(k, _)| k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(indices: Vec<usize>, values: Vec<f64>) -> Observation {
        Observation::new(1, indices, values).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let m = GaussianModel::standard(1);
        let v = m.marginal_log_density(&obs(vec![0], vec![0.0])).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-15);
        assert!((v + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn diagonal_single_coordinate() {
        let m = GaussianModel::standard(2);
        let v = m.marginal_log_density(&obs(vec![1], vec![2.0])).unwrap();
        // univariate formula by hand
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 2.0 * 2.0 / 2.0;
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn full_two_by_two_at_origin() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let m = GaussianModel::full(vec![0.0, 0.0], cov).unwrap();
        let v = m.marginal_log_density(&obs(vec![0, 1], vec![0.0, 0.0])).unwrap();
        // det = 1 - 0.25
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 0.75_f64.ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn full_off_origin_matches_dense_inverse() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let m = GaussianModel::full(vec![0.5, -1.0], cov).unwrap();
        let (x0, x1) = (1.2, 0.3);
        let (d0, d1) = (x0 - 0.5, x1 + 1.0);
        let det: f64 = 2.0 * 1.0 - 0.36;
        // inverse of [[a,b],[b,c]] = [[c,-b],[-b,a]]/det
        let quad = (1.0 * d0 * d0 - 2.0 * 0.6 * d0 * d1 + 2.0 * d1 * d1) / det;
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        let v = m.log_density_at(&[0, 1], &[x0, x1]);
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn empty_observation_is_zero() {
        let m = GaussianModel::standard(3);
        assert_eq!(m.marginal_log_density(&Observation::empty(1)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(matches!(
            GaussianModel::diagonal(vec![0.0], vec![0.0]),
            Err(ModelError::NonPositiveVariance { .. })
        ));
        assert!(matches!(
            GaussianModel::diagonal(vec![0.0, 1.0], vec![1.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            GaussianModel::full(vec![0.0, 0.0], not_pd).unwrap_err(),
            ModelError::NotPositiveDefinite
        );
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 1.0]);
        assert!(matches!(
            GaussianModel::full(vec![0.0, 0.0], asym),
            Err(ModelError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn observation_validation() {
        assert_eq!(
            Observation::new(1, vec![2, 1], vec![0.0, 0.0]).unwrap_err(),
            ModelError::UnsortedIndices
        );
        assert_eq!(
            Observation::new(1, vec![1, 1], vec![0.0, 0.0]).unwrap_err(),
            ModelError::UnsortedIndices
        );
        assert!(matches!(
            Observation::new(1, vec![1], vec![]),
            Err(ModelError::LengthMismatch { .. })
        ));
        let m = GaussianModel::standard(2);
        assert!(matches!(
            m.marginal_log_density(&obs(vec![2], vec![0.0])),
            Err(ModelError::IndexOutOfRange { .. })
        ));
    }

    fn shifted(p: usize, coords: &[usize], delta: f64) -> GaussianModel {
        let mut mean = vec![0.0; p];
        for &j in coords {
            mean[j] = delta;
        }
        GaussianModel::diagonal(mean, vec![1.0; p]).unwrap()
    }

    #[test]
    fn bank_rejects_identical_mode_and_empty() {
        let base = GaussianModel::standard(3);
        assert_eq!(
            ModeBank::unlabeled(base.clone(), vec![GaussianModel::standard(3)]).unwrap_err(),
            ModelError::ModeEqualsBase { index: 0 }
        );
        assert_eq!(
            ModeBank::unlabeled(base.clone(), vec![]).unwrap_err(),
            ModelError::EmptyBank
        );
        assert!(matches!(
            ModeBank::unlabeled(base, vec![GaussianModel::standard(2)]),
            Err(ModelError::ModeDimension { .. })
        ));
    }

    #[test]
    fn llr_is_zero_off_support() {
        let bank = ModeBank::unlabeled(GaussianModel::standard(4), vec![shifted(4, &[0, 1], 0.7)]).unwrap();
        let v = bank.log_likelihood_ratio(0, &obs(vec![2, 3], vec![1.3, -0.4])).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(bank.log_likelihood_ratio(0, &Observation::empty(1)).unwrap(), 0.0);
    }

    #[test]
    fn llr_shift_formula() {
        let bank = ModeBank::unlabeled(GaussianModel::standard(1), vec![shifted(1, &[0], 0.5)]).unwrap();
        let v = bank.log_likelihood_ratio(0, &obs(vec![0], vec![1.0])).unwrap();
        // delta * x - delta^2 / 2
        assert!((v - (0.5 * 1.0 - 0.125)).abs() < 1e-15);
        assert!((v - 0.375).abs() < 1e-15);
    }

    #[test]
    fn llr_mode_index_checked() {
        let bank = ModeBank::unlabeled(GaussianModel::standard(1), vec![shifted(1, &[0], 0.5)]).unwrap();
        assert!(matches!(
            bank.log_likelihood_ratio(1, &obs(vec![0], vec![1.0])),
            Err(ModelError::ModeOutOfRange { .. })
        ));
    }

    #[test]
    fn llr_matches_density_difference() {
        let base = GaussianModel::diagonal(vec![0.1, -0.2, 0.3], vec![1.0, 2.0, 0.5]).unwrap();
        let mode = GaussianModel::diagonal(vec![0.9, -0.2, 0.0], vec![1.5, 2.0, 0.7]).unwrap();
        let bank = ModeBank::unlabeled(base.clone(), vec![mode.clone()]).unwrap();
        let o = obs(vec![0, 1, 2], vec![0.4, 1.1, -0.8]);
        let direct = mode.marginal_log_density(&o).unwrap() - base.marginal_log_density(&o).unwrap();
        assert!((bank.log_likelihood_ratio(0, &o).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn all_llrs_match_per_mode() {
        let p = 6;
        let modes = vec![
            shifted(p, &[0, 1, 2], 0.8),
            shifted(p, &[2, 3], -0.4),
            shifted(p, &[5], 1.1),
        ];
        let bank = ModeBank::unlabeled(GaussianModel::standard(p), modes).unwrap();
        let o = obs(vec![1, 2, 3, 5], vec![0.3, -1.2, 0.8, 2.0]);
        let all = bank.all_llrs(&o).unwrap();
        for (k, v) in all.iter().enumerate() {
            assert_eq!(v.to_bits(), bank.llr_at(k, &o.indices, &o.values).to_bits());
        }
    }

    #[test]
    fn full_bank_llr() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let base = GaussianModel::full(vec![0.0, 0.0], cov.clone()).unwrap();
        let mode = GaussianModel::full(vec![0.5, 0.0], cov).unwrap();
        let bank = ModeBank::unlabeled(base.clone(), vec![mode.clone()]).unwrap();
        assert!(!bank.is_diagonal());
        let o = obs(vec![0], vec![1.0]);
        // marginal on coordinate 0 is N(mu, 1)
        assert!((bank.log_likelihood_ratio(0, &o).unwrap() - 0.375).abs() < 1e-14);
        assert_eq!(bank.support(0), &[0]);
    }

    #[test]
    fn tiny_variance_draw_near_mean() {
        let base = GaussianModel::standard(3);
        let mode = GaussianModel::diagonal(vec![1.0, -2.0, 0.5], vec![1e-12; 3]).unwrap();
        let bank = ModeBank::unlabeled(base, vec![mode]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = bank.sample_mode(0, &mut rng).unwrap();
        for (a, b) in x.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn sample_mean_concentrates() {
        let mode = GaussianModel::diagonal(vec![0.8], vec![1.0]).unwrap();
        let bank = ModeBank::unlabeled(GaussianModel::standard(1), vec![mode]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| bank.sample_mode(0, &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.8).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let mode = GaussianModel::full(vec![1.0, 0.0], cov.clone()).unwrap();
        let bank = ModeBank::unlabeled(GaussianModel::full(vec![0.0, 0.0], cov).unwrap(), vec![mode]).unwrap();
        let a = bank.sample_mode(0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = bank.sample_mode(0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_sample_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let m = GaussianModel::full(vec![0.0, 1.0], cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 50_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| m.sample(&mut rng)).collect();
        let m1: f64 = draws.iter().map(|x| x[1]).sum::<f64>() / n as f64;
        let c01: f64 = draws.iter().map(|x| x[0] * (x[1] - 1.0)).sum::<f64>() / n as f64;
        assert!((m1 - 1.0).abs() < 0.03);
        assert!((c01 - 0.6).abs() < 0.05);
    }

    #[test]
    fn dominant_modes_pick_largest_shift() {
        let p = 3;
        let modes = vec![shifted(p, &[0, 1], 0.5), shifted(p, &[1], 0.9)];
        let bank = ModeBank::unlabeled(GaussianModel::standard(p), modes).unwrap();
        assert_eq!(bank.dominant_modes(), vec![Some(0), Some(1), None]);
    }
}
