//! Per-sensor comparators: sampled per-sensor SR (TSSRP) and top-R CUSUM
//! with compensation for unobserved streams (TRAS).
//!
//! Both monitor each coordinate on its own against a single alternative, a
//! mean shift of `shift` in every sensor, and alarm on the sum of the `r`
//! largest local statistics.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{CoordLlr, GaussianModel};
use crate::monitor::{top_indices, LogSr};
use crate::planner::{plan_random, SamplingPlan, Solver};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("budget q = {q} must be within 1..={p}")]
    BadBudget { q: usize, p: usize },
    #[error("top-r count {r} must be within 1..={p}")]
    BadTopR { r: usize, p: usize },
    #[error("shift must be finite and non-zero, got {0}")]
    BadShift(f64),
    #[error("{name} must be finite and non-negative, got {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("exploration fraction must be in [0, 1], got {0}")]
    BadExplore(f64),
}

/// Sum of the `r` largest entries.
pub fn top_r_sum(values: &[f64], r: usize) -> f64 {
    top_indices(values, r).iter().map(|&j| values[j]).sum()
}

/// Per-sensor ratio terms for a mean shift of `shift` (sensor units), with
/// the base marginal variance kept.
pub fn shifted_alternatives(base: &GaussianModel, shift: f64) -> Vec<CoordLlr> {
    (0..base.dim())
        .map(|j| {
            let m = base.mean()[j];
            let v = base.covariance().variance(j);
            CoordLlr::new(m + shift, v, m, v)
        })
        .collect()
}

/// Per-sensor Shiryaev–Roberts statistics in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSr {
    pub t: u64,
    pub logstats: Vec<LogSr>,
}

impl SensorSr {
    pub fn new(p: usize) -> Self {
        Self {
            t: 0,
            logstats: vec![LogSr::Zero; p],
        }
    }

    /// Observed sensors take their ratio, the rest only the `+1` drift.
    pub fn update(&mut self, alternatives: &[CoordLlr], indices: &[usize], values: &[f64]) {
        let mut next = indices.iter().zip(values).peekable();
        for (j, s) in self.logstats.iter_mut().enumerate() {
            let llr = match next.peek() {
                Some(&(&i, &x)) if i == j => {
                    next.next();
                    alternatives[j].eval(x)
                }
                _ => 0.0,
            };
            *s = s.advance(llr);
        }
        self.t += 1;
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.values_into(&mut out);
        out
    }

    pub fn values_into(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.logstats.iter().map(|s| s.rank_value()));
    }

    /// Sampled next-tick statistic of sensor `j` for a hypothetical value
    /// `x`, with or without observing it.
    pub fn sampled(&self, alternatives: &[CoordLlr], j: usize, observed: bool, x: f64) -> f64 {
        let llr = if observed { alternatives[j].eval(x) } else { 0.0 };
        self.logstats[j].advance(llr).rank_value()
    }

    /// Thompson scores: each sensor's sampled statistic when observed at a
    /// value drawn from its alternative.
    pub fn thompson_scores<R: Rng + ?Sized>(&self, alternatives: &[CoordLlr], rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.logstats.iter().zip(alternatives).map(|(s, a)| {
            let z: f64 = rng.sample(StandardNormal);
            let x = a.mode_mean() + a.mode_var().sqrt() * z;
            s.bumped() + a.eval(x)
        }));
    }

    /// Sensor with the largest statistic (lowest index on ties).
    pub fn argmax(&self) -> Option<usize> {
        if self.t == 0 {
            return None;
        }
        top_indices(&self.values(), 1).first().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TssrpParams {
    pub q: usize,
    /// Alarm on the sum of the `r` largest statistics; defaults to `q`.
    #[serde(default)]
    pub r: Option<usize>,
    /// Per-sensor alternative shift; defaults to the scenario magnitude.
    #[serde(default)]
    pub shift: Option<f64>,
}

/// One TSSRP tick: update on `obs`, then plan the `q` sensors with the
/// largest sampled statistics.
pub fn tssrp_step<R: Rng + ?Sized>(
    stats: &mut SensorSr,
    alternatives: &[CoordLlr],
    indices: &[usize],
    values: &[f64],
    q: usize,
    rng: &mut R,
    scratch: &mut Vec<f64>,
) -> SamplingPlan {
    stats.update(alternatives, indices, values);
    stats.thompson_scores(alternatives, rng, scratch);
    let mut plan = top_indices(scratch, q);
    plan.sort_unstable();
    SamplingPlan::new(plan, alternatives.len(), Solver::Sort).expect("distinct in-range indices")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrasParams {
    pub q: usize,
    #[serde(default)]
    pub r: Option<usize>,
    /// CUSUM allowance in standard units; defaults to half the shift.
    #[serde(default)]
    pub allowance: Option<f64>,
    /// Increment for unobserved sensors; defaults to half the allowance.
    #[serde(default)]
    pub compensation: Option<f64>,
    /// Fraction of the budget spent on uniformly random sensors.
    #[serde(default)]
    pub explore: f64,
    #[serde(default)]
    pub sides: Sides,
}

/// Which CUSUM sides form a sensor's local statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    /// `max(upper, lower)`.
    #[default]
    Both,
    /// Upward shifts only.
    Upper,
}

/// TRAS parameters with defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrasResolved {
    pub q: usize,
    pub r: usize,
    pub allowance: f64,
    pub compensation: f64,
    pub explore: f64,
    pub sides: Sides,
}

impl TrasParams {
    pub fn resolve(&self, p: usize, shift: f64) -> Result<TrasResolved, BaselineError> {
        check_budget(self.q, p)?;
        let r = self.r.unwrap_or(self.q);
        check_top_r(r, p)?;
        let allowance = self.allowance.unwrap_or(shift.abs() / 2.0);
        let compensation = self.compensation.unwrap_or(allowance / 2.0);
        for (name, value) in [("allowance", allowance), ("compensation", compensation)] {
            if !value.is_finite() || value < 0.0 {
                return Err(BaselineError::BadParameter { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.explore) {
            return Err(BaselineError::BadExplore(self.explore));
        }
        Ok(TrasResolved {
            q: self.q,
            r,
            allowance,
            compensation,
            explore: self.explore,
            sides: self.sides,
        })
    }
}

pub(crate) fn check_budget(q: usize, p: usize) -> Result<(), BaselineError> {
    if q == 0 || q > p {
        return Err(BaselineError::BadBudget { q, p });
    }
    Ok(())
}

pub(crate) fn check_top_r(r: usize, p: usize) -> Result<(), BaselineError> {
    if r == 0 || r > p {
        return Err(BaselineError::BadTopR { r, p });
    }
    Ok(())
}

/// Upper and lower CUSUM per sensor on standardized values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrasState {
    pub t: u64,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    mean: Vec<f64>,
    inv_sd: Vec<f64>,
    sides: Sides,
}

impl TrasState {
    pub fn new(base: &GaussianModel) -> Self {
        let p = base.dim();
        Self {
            t: 0,
            upper: vec![0.0; p],
            lower: vec![0.0; p],
            mean: base.mean().to_vec(),
            inv_sd: (0..p).map(|j| base.covariance().variance(j).sqrt().recip()).collect(),
            sides: Sides::Both,
        }
    }

    pub fn with_sides(mut self, sides: Sides) -> Self {
        self.sides = sides;
        self
    }

    pub fn update(&mut self, params: &TrasResolved, indices: &[usize], values: &[f64]) {
        let mut next = indices.iter().zip(values).peekable();
        for j in 0..self.upper.len() {
            match next.peek() {
                Some(&(&i, &x)) if i == j => {
                    next.next();
                    let z = (x - self.mean[j]) * self.inv_sd[j];
                    self.upper[j] = (self.upper[j] + z - params.allowance).max(0.0);
                    self.lower[j] = (self.lower[j] - z - params.allowance).max(0.0);
                }
                _ => {
                    self.upper[j] += params.compensation;
                    self.lower[j] += params.compensation;
                }
            }
        }
        self.t += 1;
    }

    /// Local statistics: `max(upper, lower)`, or `upper` alone.
    pub fn statistics_into(&self, out: &mut Vec<f64>) {
        out.clear();
        match self.sides {
            Sides::Both => out.extend(self.upper.iter().zip(&self.lower).map(|(u, l)| u.max(*l))),
            Sides::Upper => out.extend_from_slice(&self.upper),
        }
    }

    pub fn statistics(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.statistics_into(&mut out);
        out
    }
}

/// Indices of the `n` largest values; ties go to a uniformly random order.
pub fn top_indices_random_ties<R: Rng + ?Sized>(values: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let n = n.min(values.len());
    if n == 0 {
        return Vec::new();
    }
    let keys: Vec<u64> = values.iter().map(|_| rng.random()).collect();
    let cmp = |&a: &usize, &b: &usize| values[b].total_cmp(&values[a]).then(keys[a].cmp(&keys[b]));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, cmp);
        idx.truncate(n);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Top-`q` plan on the local statistics, ties broken at random so that
/// equally compensated sensors are visited in random order. Each slot
/// independently goes to a uniformly random unselected sensor with
/// probability `explore`.
pub fn tras_plan<R: Rng + ?Sized>(stats: &[f64], params: &TrasResolved, rng: &mut R) -> SamplingPlan {
    let p = stats.len();
    let explored = if params.explore > 0.0 {
        (0..params.q).filter(|_| rng.random::<f64>() < params.explore).count()
    } else {
        0
    };
    let mut chosen = top_indices_random_ties(stats, params.q - explored, rng);
    if explored > 0 {
        let rest: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
        let extra = plan_random(rest.len(), explored, rng);
        chosen.extend(extra.indices().iter().map(|&i| rest[i]));
    }
    chosen.sort_unstable();
    SamplingPlan::new(chosen, p, Solver::Sort).expect("distinct in-range indices")
}

/// One TRAS tick: update, then plan from the refreshed statistics.
pub fn tras_step<R: Rng + ?Sized>(
    state: &mut TrasState,
    params: &TrasResolved,
    indices: &[usize],
    values: &[f64],
    rng: &mut R,
    scratch: &mut Vec<f64>,
) -> SamplingPlan {
    state.update(params, indices, values);
    state.statistics_into(scratch);
    tras_plan(scratch, params, rng)
}
