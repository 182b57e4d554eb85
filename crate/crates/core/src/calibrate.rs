//! Control-limit search for a target in-control average run length.
//!
//! Trajectories do not depend on the threshold, so every replication's run
//! length is a nondecreasing step function of it. The search simulates each
//! null replication once, lazily, and answers every candidate threshold from
//! the same paths. Thresholds whose capped mean run length already exceeds
//! the target are rejected without simulating to the full horizon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{Experiment, SimPath};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("target ARL0 must exceed 1, got {0}")]
    BadTarget(f64),
    #[error("tolerance must lie in (0, 0.5), got {0}")]
    BadTolerance(f64),
    #[error("horizon {horizon} is below 10 x target ({target})")]
    ShortHorizon { horizon: u64, target: f64 },
    #[error("bracket ({0}, {1}) is not ordered")]
    BadBracket(f64, f64),
    #[error("need at least 2 replications")]
    TooFewReplications,
    #[error("every replication was censored at the horizon")]
    AllCensored,
    #[error("bracket expansion failed after {0} doublings")]
    BracketExpansion(u32),
}

/// Streaming mean and variance, mergeable in any order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Welford) -> Welford {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    /// Sample variance (`n - 1` denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sd() / (self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        iter.into_iter().for_each(|x| w.push(x));
        w
    }
}

/// Censoring above this fraction flags the estimate.
pub const CENSORING_LIMIT: f64 = 0.01;

/// Mean run length over replications; censored runs count at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEstimate {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub replications: u64,
    pub censored: u64,
    pub horizon: u64,
}

impl ArlEstimate {
    pub fn from_lengths(lengths: &[Option<u64>], horizon: u64) -> Self {
        let w: Welford = lengths.iter().map(|l| l.unwrap_or(horizon) as f64).collect();
        Self {
            mean: w.mean,
            sd: w.sd(),
            se: w.se(),
            replications: w.n,
            censored: lengths.iter().filter(|l| l.is_none()).count() as u64,
            horizon,
        }
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.replications == 0 {
            0.0
        } else {
            self.censored as f64 / self.replications as f64
        }
    }

    /// True when censoring is high enough to bias the mean noticeably.
    pub fn censoring_flag(&self) -> bool {
        self.censored_fraction() > CENSORING_LIMIT
    }
}

/// Initial log-scale bracket from the in-control run-length bounds:
/// `E[T] >= exp(A) / K` gives the upper end; the lower end divides the
/// target by `10`.
pub fn arl_bracket(k: usize, target_arl0: f64) -> (f64, f64) {
    let low = (target_arl0 / 10.0).max(1.0).ln();
    let high = (k as f64 * target_arl0).ln();
    (low, high)
}

/// Bracket widenings allowed before calibration gives up. Statistics that
/// are not SR-based (top-r CUSUM sums) can sit far above the default bracket.
pub const MAX_DOUBLINGS: u32 = 10;

/// Lower bound on the in-control ARL implied by a threshold.
pub fn arl_lower_bound(k: usize, threshold: f64) -> f64 {
    threshold.exp() / k as f64
}

/// Monte Carlo in-control ARL at a fixed threshold.
pub fn estimate_arl0(
    exp: &Experiment,
    threshold: f64,
    replications: u64,
    horizon: u64,
) -> Result<ArlEstimate, CalibrationError> {
    let lengths: Vec<Option<u64>> = (0..replications)
        .into_par_iter()
        .map(|rep| exp.null_path(rep, false).run(threshold, horizon, None).stop)
        .collect();
    let est = ArlEstimate::from_lengths(&lengths, horizon);
    if est.replications > 0 && est.censored == est.replications {
        return Err(CalibrationError::AllCensored);
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub target_arl0: f64,
    pub replications: u64,
    /// Tick cap per replication; defaults to `20 x target`.
    #[serde(default)]
    pub max_horizon: Option<u64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Initial bracket; defaults to [`arl_bracket`].
    #[serde(default)]
    pub bracket: Option<(f64, f64)>,
    #[serde(default = "default_iterations")]
    pub max_iterations: u32,
}

fn default_tolerance() -> f64 {
    0.05
}

fn default_iterations() -> u32 {
    20
}

impl CalibrationSpec {
    pub fn new(target_arl0: f64, replications: u64) -> Self {
        Self {
            target_arl0,
            replications,
            max_horizon: None,
            tolerance: default_tolerance(),
            bracket: None,
            max_iterations: default_iterations(),
        }
    }

    pub fn horizon(&self) -> u64 {
        self.max_horizon.unwrap_or((20.0 * self.target_arl0).ceil() as u64)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.target_arl0 > 1.0) || !self.target_arl0.is_finite() {
            return Err(CalibrationError::BadTarget(self.target_arl0));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 0.5) {
            return Err(CalibrationError::BadTolerance(self.tolerance));
        }
        if (self.horizon() as f64) < 10.0 * self.target_arl0 {
            return Err(CalibrationError::ShortHorizon {
                horizon: self.horizon(),
                target: self.target_arl0,
            });
        }
        if let Some((lo, hi)) = self.bracket {
            if !(lo < hi) {
                return Err(CalibrationError::BadBracket(lo, hi));
            }
        }
        if self.replications < 2 {
            return Err(CalibrationError::TooFewReplications);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub achieved: ArlEstimate,
    pub iterations: u32,
    pub converged: bool,
    /// Every threshold evaluated with its ARL estimate (or capped lower bound).
    pub history: Vec<(f64, f64)>,
}

/// Null replications simulated once and extended on demand.
pub struct PathCache {
    paths: Vec<SimPath>,
    horizon: u64,
}

impl PathCache {
    pub fn new(exp: &Experiment, replications: u64, horizon: u64) -> Self {
        Self {
            paths: (0..replications).map(|rep| exp.null_path(rep, false)).collect(),
            horizon,
        }
    }

    fn lengths(&mut self, threshold: f64, limit: u64) -> Vec<Option<u64>> {
        self.paths
            .par_iter_mut()
            .map(|p| p.run_length(threshold, limit))
            .collect()
    }

    /// Mean of `min(T, cap)`: a lower bound on the ARL at `threshold`.
    pub fn capped_mean(&mut self, threshold: f64, cap: u64) -> f64 {
        let lengths = self.lengths(threshold, cap);
        lengths.iter().map(|l| l.unwrap_or(cap) as f64).sum::<f64>() / lengths.len() as f64
    }

    pub fn estimate(&mut self, threshold: f64) -> ArlEstimate {
        let lengths = self.lengths(threshold, self.horizon);
        ArlEstimate::from_lengths(&lengths, self.horizon)
    }
}

/// Bisection on the threshold until the in-control ARL is within tolerance
/// of the target. Uses the same null replications for every candidate.
pub fn bisect_threshold(spec: &CalibrationSpec, exp: &Experiment) -> Result<CalibrationResult, CalibrationError> {
    spec.validate()?;
    let target = spec.target_arl0;
    let tol = spec.tolerance * target;
    let mut cache = PathCache::new(exp, spec.replications, spec.horizon());
    let cap = (2.0 * target).ceil() as u64;
    let mut history = Vec::new();

    let (mut lo, mut hi) = spec.bracket.unwrap_or_else(|| arl_bracket(exp.bank.len(), target));

    // Lower end must fall short of the target.
    let mut doublings = 0;
    loop {
        let est = cache.estimate(lo);
        history.push((lo, est.mean));
        if est.mean < target - tol {
            break;
        }
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(CalibrationError::BracketExpansion(MAX_DOUBLINGS));
        }
        let width = hi - lo;
        hi = lo;
        lo -= 2.0 * width;
    }
    // Upper end must exceed it.
    doublings = 0;
    loop {
        let bound = cache.capped_mean(hi, cap);
        if bound > target + tol {
            history.push((hi, bound));
            break;
        }
        let est = cache.estimate(hi);
        history.push((hi, est.mean));
        if est.mean > target + tol {
            break;
        }
        if est.censored == est.replications {
            return Err(CalibrationError::AllCensored);
        }
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(CalibrationError::BracketExpansion(MAX_DOUBLINGS));
        }
        let width = hi - lo;
        lo = hi;
        hi += 2.0 * width;
    }

    let mut best: Option<(f64, ArlEstimate)> = None;
    for iteration in 1..=spec.max_iterations {
        let mid = 0.5 * (lo + hi);
        let bound = cache.capped_mean(mid, cap);
        if bound > target + tol {
            history.push((mid, bound));
            hi = mid;
            continue;
        }
        let est = cache.estimate(mid);
        history.push((mid, est.mean));
        if (est.mean - target).abs() <= tol {
            return Ok(CalibrationResult {
                threshold: mid,
                achieved: est,
                iterations: iteration,
                converged: true,
                history,
            });
        }
        if best
            .as_ref()
            .is_none_or(|(_, b)| (est.mean - target).abs() < (b.mean - target).abs())
        {
            best = Some((mid, est));
        }
        if est.mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (threshold, achieved) = match best {
        Some(b) => b,
        None => {
            let t = 0.5 * (lo + hi);
            (t, cache.estimate(t))
        }
    };
    Ok(CalibrationResult {
        threshold,
        achieved,
        iterations: spec.max_iterations,
        converged: false,
        history,
    })
}
