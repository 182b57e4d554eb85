//! Choosing the next tick's observed coordinates.
//!
//! Planning maximizes a Thompson-sampled reward: for the `ks` modes with the
//! largest current statistics, draw one hypothetical vector from each mode
//! and score a candidate index set `C` by
//!
//! ```text
//! S(C) = sum_k [ log(exp(r_k) + 1) + log f_k(x_k[C]) - log f_0(x_k[C]) ]
//! ```
//!
//! The draws are fixed for the whole tick. With diagonal models `S(C)`
//! decomposes into a constant plus per-coordinate scores, so sorting the
//! scores is exact. The greedy and exhaustive solvers handle any covariance.

use itertools::Itertools;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{Covariance, GaussianModel, ModeBank};
use crate::monitor::{rank_cmp, top_indices, MonitorState};

/// Which solver produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Sort,
    Greedy,
    Exhaustive,
    Random,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("budget q = {q} must be within 0..={p}")]
    BadBudget { q: usize, p: usize },
    #[error("ks = {ks} must be within 1..={k}")]
    BadTopModes { ks: usize, k: usize },
    #[error("plan indices must be strictly increasing and below {p}")]
    BadIndices { p: usize },
    #[error("score-sort planning needs diagonal models; use the greedy solver")]
    NotDiagonal,
    #[error("exhaustive search over C({p}, {q}) = {count} subsets exceeds the {limit} guard")]
    TooManySubsets {
        p: usize,
        q: usize,
        count: u128,
        limit: u128,
    },
    #[error("solver {0:?} is not a reward-maximizing planner")]
    UnsupportedSolver(Solver),
}

/// Observed index set for one tick.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingPlan {
    indices: Vec<usize>,
    solver: Solver,
}

impl SamplingPlan {
    pub fn new(mut indices: Vec<usize>, p: usize, solver: Solver) -> Result<Self, PlannerError> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) || indices.last().is_some_and(|&j| j >= p) {
            return Err(PlannerError::BadIndices { p });
        }
        Ok(Self { indices, solver })
    }

    /// Every coordinate.
    pub fn full(p: usize) -> Self {
        Self {
            indices: (0..p).collect(),
            solver: Solver::Fixed,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Sensing budget.
    pub q: usize,
    /// Number of top modes entering the reward.
    pub ks: usize,
    pub solver: Solver,
    pub rng_seed: u64,
}

impl PlannerConfig {
    pub fn validate(&self, p: usize, k: usize) -> Result<(), PlannerError> {
        if self.q > p {
            return Err(PlannerError::BadBudget { q: self.q, p });
        }
        if self.ks == 0 || self.ks > k {
            return Err(PlannerError::BadTopModes { ks: self.ks, k });
        }
        Ok(())
    }
}

/// One tick's Thompson draws: a full vector per selected mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ThompsonDraws {
    /// Selected modes, largest current statistic first.
    pub modes: Vec<usize>,
    /// `samples[i]` is a draw from `modes[i]`.
    pub samples: Vec<Vec<f64>>,
    /// `log(exp(r_k) + 1)` for each selected mode.
    pub bumped: Vec<f64>,
}

impl ThompsonDraws {
    /// Draws for explicit modes, mainly for tests that share draws across solvers.
    pub fn from_parts(state: &MonitorState, modes: Vec<usize>, samples: Vec<Vec<f64>>) -> Self {
        let bumped = modes.iter().map(|&k| state.logstats[k].bumped()).collect();
        Self { modes, samples, bumped }
    }
}

/// Draw once from each of the `ks` modes with the largest statistics.
pub fn draw_thompson<R: Rng + ?Sized>(state: &MonitorState, bank: &ModeBank, ks: usize, rng: &mut R) -> ThompsonDraws {
    let modes = state.top_modes(ks);
    let samples = modes.iter().map(|&k| draw_mode(bank, k, rng)).collect();
    ThompsonDraws::from_parts(state, modes, samples)
}

/// A draw from mode `k` for planning. With diagonal banks only the mode's
/// support is random; elsewhere the mode mean is used, since those
/// coordinates carry a zero ratio either way.
fn draw_mode<R: Rng + ?Sized>(bank: &ModeBank, k: usize, rng: &mut R) -> Vec<f64> {
    let model = bank.mode(k);
    match bank.coord_terms(k) {
        Some(terms) => {
            let mut x = model.mean().to_vec();
            for &(j, _) in terms {
                let z: f64 = rng.sample(StandardNormal);
                x[j] += model.covariance().variance(j).sqrt() * z;
            }
            x
        }
        None => model.sample(rng),
    }
}

/// Per-coordinate scores `s_j = sum_k log f_{j,k}(x_k[j]) / f_{j,0}(x_k[j])`.
pub fn scores_from_draws(bank: &ModeBank, draws: &ThompsonDraws) -> Result<Vec<f64>, PlannerError> {
    let mut scores = vec![0.0; bank.dim()];
    for (&k, x) in draws.modes.iter().zip(&draws.samples) {
        let terms = bank.coord_terms(k).ok_or(PlannerError::NotDiagonal)?;
        for &(j, llr) in terms {
            scores[j] += llr.eval(x[j]);
        }
    }
    Ok(scores)
}

/// Thompson draws followed by per-coordinate scoring. Diagonal banks only.
pub fn thompson_scores<R: Rng + ?Sized>(
    state: &MonitorState,
    bank: &ModeBank,
    ks: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<usize>), PlannerError> {
    if !bank.is_diagonal() {
        return Err(PlannerError::NotDiagonal);
    }
    let draws = draw_thompson(state, bank, ks, rng);
    let scores = scores_from_draws(bank, &draws)?;
    Ok((scores, draws.modes))
}

/// Indices of the `q` largest scores (lowest index on ties).
pub fn plan_sort(scores: &[f64], q: usize) -> SamplingPlan {
    let mut indices = top_indices(scores, q);
    indices.sort_unstable();
    SamplingPlan {
        indices,
        solver: Solver::Sort,
    }
}

/// Sampled reward of index set `indices` (sorted) under fixed draws.
pub fn sampled_reward(bank: &ModeBank, draws: &ThompsonDraws, indices: &[usize]) -> f64 {
    let mut values = Vec::with_capacity(indices.len());
    draws
        .modes
        .iter()
        .zip(&draws.samples)
        .zip(&draws.bumped)
        .map(|((&k, x), &bump)| {
            values.clear();
            values.extend(indices.iter().map(|&j| x[j]));
            bump + bank.llr_at(k, indices, &values)
        })
        .sum()
}

/// Log-density of a growing coordinate subset, extended one index at a time
/// by appending a row to the Cholesky factor of the sub-block.
struct IncrementalDensity<'a> {
    model: &'a GaussianModel,
    x: &'a [f64],
    indices: Vec<usize>,
    /// rows of the lower-triangular factor
    lower: Vec<Vec<f64>>,
    z: Vec<f64>,
    half_log_det: f64,
    quad: f64,
}

impl<'a> IncrementalDensity<'a> {
    fn new(model: &'a GaussianModel, x: &'a [f64]) -> Self {
        Self {
            model,
            x,
            indices: Vec::new(),
            lower: Vec::new(),
            z: Vec::new(),
            half_log_det: 0.0,
            quad: 0.0,
        }
    }

    /// New factor row for `j`: off-diagonal part, diagonal, and z entry.
    fn row_for(&self, j: usize) -> (Vec<f64>, f64, f64) {
        let cov: &Covariance = self.model.covariance();
        let n = self.indices.len();
        let mut l = vec![0.0; n];
        for i in 0..n {
            let mut s = cov.entry(self.indices[i], j);
            for k in 0..i {
                s -= self.lower[i][k] * l[k];
            }
            l[i] = s / self.lower[i][i];
        }
        let d2 = cov.variance(j) - l.iter().map(|v| v * v).sum::<f64>();
        let d = d2.max(f64::MIN_POSITIVE).sqrt();
        let mut s = self.x[j] - self.model.mean()[j];
        for k in 0..n {
            s -= l[k] * self.z[k];
        }
        (l, d, s / d)
    }

    /// Log-density (without the `2π` term) after appending `j`.
    fn with(&self, j: usize) -> f64 {
        let (_, d, zj) = self.row_for(j);
        -(self.half_log_det + d.ln()) - 0.5 * (self.quad + zj * zj)
    }

    fn push(&mut self, j: usize) {
        let (mut l, d, zj) = self.row_for(j);
        l.push(d);
        self.lower.push(l);
        self.indices.push(j);
        self.z.push(zj);
        self.half_log_det += d.ln();
        self.quad += zj * zj;
    }
}

/// Greedy forward selection of `q` indices maximizing the sampled reward.
///
/// Diagonal banks use the additive per-coordinate gains, which makes the
/// result identical to [`plan_sort`] on the same draws.
pub fn plan_greedy(bank: &ModeBank, draws: &ThompsonDraws, q: usize) -> SamplingPlan {
    let p = bank.dim();
    let q = q.min(p);
    let mut chosen = vec![false; p];
    let mut picked = Vec::with_capacity(q);
    if let Ok(gains) = scores_from_draws(bank, draws) {
        for _ in 0..q {
            let best = (0..p)
                .filter(|&j| !chosen[j])
                .min_by(|&a, &b| rank_cmp(&gains, a, b))
                .expect("q <= p leaves a candidate");
            chosen[best] = true;
            picked.push(best);
        }
    } else {
        let mut dens: Vec<(IncrementalDensity, IncrementalDensity)> = draws
            .modes
            .iter()
            .zip(&draws.samples)
            .map(|(&k, x)| {
                (
                    IncrementalDensity::new(bank.mode(k), x),
                    IncrementalDensity::new(bank.base(), x),
                )
            })
            .collect();
        let mut values = vec![f64::NEG_INFINITY; p];
        for _ in 0..q {
            for j in 0..p {
                values[j] = if chosen[j] {
                    f64::NEG_INFINITY
                } else {
                    dens.iter().map(|(m, b)| m.with(j) - b.with(j)).sum()
                };
            }
            let best = (0..p)
                .filter(|&j| !chosen[j])
                .min_by(|&a, &b| rank_cmp(&values, a, b))
                .expect("q <= p leaves a candidate");
            for (m, b) in dens.iter_mut() {
                m.push(best);
                b.push(best);
            }
            chosen[best] = true;
            picked.push(best);
        }
    }
    picked.sort_unstable();
    SamplingPlan {
        indices: picked,
        solver: Solver::Greedy,
    }
}

/// Largest number of subsets [`plan_exhaustive`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Globally optimal index set for the sampled reward, by enumeration.
/// Among equal rewards the lexicographically first set wins.
pub fn plan_exhaustive(bank: &ModeBank, draws: &ThompsonDraws, q: usize) -> Result<SamplingPlan, PlannerError> {
    let p = bank.dim();
    if q > p {
        return Err(PlannerError::BadBudget { q, p });
    }
    let count = binomial(p, q);
    if count > EXHAUSTIVE_LIMIT {
        return Err(PlannerError::TooManySubsets {
            p,
            q,
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for combo in (0..p).combinations(q) {
        let v = sampled_reward(bank, draws, &combo);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, combo));
        }
    }
    let (_, indices) = best.expect("at least one subset");
    Ok(SamplingPlan {
        indices,
        solver: Solver::Exhaustive,
    })
}

/// Uniform sample of `q` distinct indices from `0..p`.
pub fn plan_random<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> SamplingPlan {
    let mut indices = rand::seq::index::sample(rng, p, q.min(p)).into_vec();
    indices.sort_unstable();
    SamplingPlan {
        indices,
        solver: Solver::Random,
    }
}

/// Plan the next tick with the configured solver.
pub fn plan_next<R: Rng + ?Sized>(
    state: &MonitorState,
    bank: &ModeBank,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<SamplingPlan, PlannerError> {
    cfg.validate(bank.dim(), bank.len())?;
    match cfg.solver {
        Solver::Random => Ok(plan_random(bank.dim(), cfg.q, rng)),
        Solver::Fixed => Err(PlannerError::UnsupportedSolver(Solver::Fixed)),
        Solver::Sort => {
            if !bank.is_diagonal() {
                return Err(PlannerError::NotDiagonal);
            }
            let draws = draw_thompson(state, bank, cfg.ks, rng);
            Ok(plan_sort(&scores_from_draws(bank, &draws)?, cfg.q))
        }
        Solver::Greedy => {
            let draws = draw_thompson(state, bank, cfg.ks, rng);
            Ok(plan_greedy(bank, &draws, cfg.q))
        }
        Solver::Exhaustive => {
            let draws = draw_thompson(state, bank, cfg.ks, rng);
            plan_exhaustive(bank, &draws, cfg.q)
        }
    }
}
