//! Per-mode Shiryaev–Roberts statistics under partial observation.
//!
//! Each failure mode `k` carries `R_k`, updated as
//! `R_{k,t} = (R_{k,t-1} + 1) * L_{k,t}` where `L_{k,t}` is the likelihood
//! ratio of the observed coordinates. Everything is kept in log space:
//! `r_{k,t} = log(exp(r_{k,t-1}) + 1) + log L_{k,t}`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{ModeBank, ModelError, Observation};
use crate::planner::SamplingPlan;

/// `log(exp(r) + 1)` without overflow.
#[inline]
pub fn log1p_exp(r: f64) -> f64 {
    if r > 0.0 {
        r + (-r).exp().ln_1p()
    } else {
        r.exp().ln_1p()
    }
}

/// Log of a Shiryaev–Roberts statistic. `Zero` stands for `R = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LogSr {
    Zero,
    Log(f64),
}

impl LogSr {
    /// `log(R + 1)`; exactly `0` for [`LogSr::Zero`].
    #[inline]
    pub fn bumped(self) -> f64 {
        match self {
            LogSr::Zero => 0.0,
            LogSr::Log(r) => log1p_exp(r),
        }
    }

    /// Value used for ranking and thresholds; `Zero` ranks as `-inf`.
    #[inline]
    pub fn rank_value(self) -> f64 {
        match self {
            LogSr::Zero => f64::NEG_INFINITY,
            LogSr::Log(r) => r,
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            LogSr::Zero => None,
            LogSr::Log(r) => Some(r),
        }
    }

    /// One recursion step with log-likelihood ratio `llr`.
    #[inline]
    pub fn advance(self, llr: f64) -> LogSr {
        LogSr::Log(self.bumped() + llr)
    }
}

/// Descending by value, ascending by index on ties.
#[inline]
pub(crate) fn rank_cmp(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Indices of the `n` largest values, best first, lowest index on ties.
pub fn top_indices(values: &[f64], n: usize) -> Vec<usize> {
    let n = n.min(values.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if n == 0 {
        return Vec::new();
    }
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, |&a, &b| rank_cmp(values, a, b));
        idx.truncate(n);
    }
    idx.sort_unstable_by(|&a, &b| rank_cmp(values, a, b));
    idx
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonitorError {
    #[error("observation time {got} does not follow state time {expected_prev}")]
    TimeMismatch { expected_prev: u64, got: u64 },
    #[error("state has {state} statistics but the bank has {bank} modes")]
    ModeCount { state: usize, bank: usize },
    #[error("top-sum size {ks} must be within 1..={k}")]
    BadTopSum { ks: usize, k: usize },
    #[error("threshold must be finite or -inf, got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Monitor state: tick counter and one log-SR statistic per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub t: u64,
    pub logstats: Vec<LogSr>,
    pub last_plan: Option<SamplingPlan>,
}

impl MonitorState {
    pub fn new(k: usize) -> Self {
        Self {
            t: 0,
            logstats: vec![LogSr::Zero; k],
            last_plan: None,
        }
    }

    pub fn len(&self) -> usize {
        self.logstats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logstats.is_empty()
    }

    /// Ranking values (`-inf` for untouched statistics).
    pub fn values(&self) -> Vec<f64> {
        self.logstats.iter().map(|s| s.rank_value()).collect()
    }

    /// Advance by one tick, returning the new state.
    pub fn update(&self, bank: &ModeBank, obs: &Observation) -> Result<MonitorState, MonitorError> {
        if obs.time != self.t + 1 {
            return Err(MonitorError::TimeMismatch {
                expected_prev: self.t,
                got: obs.time,
            });
        }
        if self.len() != bank.len() {
            return Err(MonitorError::ModeCount {
                state: self.len(),
                bank: bank.len(),
            });
        }
        let llrs = bank.all_llrs(obs)?;
        let mut next = self.clone();
        next.apply_llrs(&llrs);
        Ok(next)
    }

    /// In-place recursion step given every mode's log-likelihood ratio.
    pub fn apply_llrs(&mut self, llrs: &[f64]) {
        debug_assert_eq!(llrs.len(), self.logstats.len());
        for (s, &l) in self.logstats.iter_mut().zip(llrs) {
            *s = s.advance(l);
        }
        self.t += 1;
    }

    /// Modes ranked by statistic, best first, lowest index on ties.
    pub fn ranking(&self) -> Vec<usize> {
        top_indices(&self.values(), self.len())
    }

    /// The `n` modes with the largest statistics.
    pub fn top_modes(&self, n: usize) -> Vec<usize> {
        top_indices(&self.values(), n)
    }

    /// Stopping-rule statistic. Untouched statistics count as `-inf`.
    pub fn rule_statistic(&self, rule: DetectionRule) -> f64 {
        let values = self.values();
        match rule {
            DetectionRule::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            DetectionRule::TopSum { ks } => top_indices(&values, ks).iter().map(|&k| values[k]).sum(),
        }
    }

    /// Isolated mode: argmax of the statistics, lowest index on ties.
    pub fn isolate(&self) -> Option<usize> {
        if self.t == 0 {
            return None;
        }
        self.top_modes(1).first().copied()
    }

    pub fn check_alarm(&self, cfg: &DetectionConfig) -> AlarmReport {
        let statistic = self.rule_statistic(cfg.rule);
        let fired = self.t >= 1 && statistic >= cfg.threshold;
        AlarmReport {
            fired,
            time: self.t,
            isolated_mode: if fired { self.isolate() } else { None },
            statistic,
        }
    }
}

/// Global stopping rule across modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DetectionRule {
    /// Largest statistic.
    #[default]
    Max,
    /// Sum of the `ks` largest statistics.
    TopSum { ks: usize },
}

impl DetectionRule {
    pub fn validate(&self, k: usize) -> Result<(), MonitorError> {
        match *self {
            DetectionRule::Max => Ok(()),
            DetectionRule::TopSum { ks } if ks >= 1 && ks <= k => Ok(()),
            DetectionRule::TopSum { ks } => Err(MonitorError::BadTopSum { ks, k }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub rule: DetectionRule,
    /// Log-scale control limit.
    pub threshold: f64,
}

impl DetectionConfig {
    pub fn new(rule: DetectionRule, threshold: f64, k: usize) -> Result<Self, MonitorError> {
        rule.validate(k)?;
        if threshold.is_nan() || threshold == f64::INFINITY {
            return Err(MonitorError::BadThreshold(threshold));
        }
        Ok(Self { rule, threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub fired: bool,
    pub time: u64,
    pub isolated_mode: Option<usize>,
    pub statistic: f64,
}
