//! Every monitoring policy behind one interface, and the simulation loop.
//!
//! A policy only ever sees the coordinates it asked for: the loop reads the
//! current plan through an [`ObservationGate`], hands the values over, and
//! asks for the next plan. The detection statistic never influences which
//! coordinates are read, so a trajectory is the same for every threshold.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    check_budget, check_top_r, shifted_alternatives, top_r_sum, tras_plan, BaselineError, SensorSr, Sides, TrasParams,
    TrasResolved, TrasState, TssrpParams,
};
use crate::model::{CoordLlr, ModeBank};
use crate::monitor::{top_indices, DetectionRule, MonitorError, MonitorState};
use crate::planner::{plan_next, plan_random, PlannerConfig, PlannerError, SamplingPlan, Solver};
use crate::scenarios::{ObservationGate, ScenarioSpec, StreamGenerator};
use crate::seeds::{derive_seed, tag};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

fn one() -> usize {
    1
}

fn sort() -> Solver {
    Solver::Sort
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtssrpParams {
    pub q: usize,
    /// Modes drawn for the Thompson reward.
    #[serde(default = "one")]
    pub ks: usize,
    #[serde(default = "sort")]
    pub solver: Solver,
    #[serde(default)]
    pub rule: DetectionRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomParams {
    pub q: usize,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrandomParams {
    pub q: usize,
    #[serde(default)]
    pub rule: DetectionRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct OracleParams {
    #[serde(default)]
    pub rule: DetectionRule,
}

/// A monitoring policy and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Mtssrp(MtssrpParams),
    Tssrp(TssrpParams),
    Tras(TrasParams),
    Random(RandomParams),
    Mrandom(MrandomParams),
    Oracle(OracleParams),
}

impl PolicySpec {
    pub fn mtssrp(q: usize) -> Self {
        PolicySpec::Mtssrp(MtssrpParams {
            q,
            ks: 1,
            solver: Solver::Sort,
            rule: DetectionRule::Max,
        })
    }

    pub fn tssrp(q: usize) -> Self {
        PolicySpec::Tssrp(TssrpParams {
            q,
            r: None,
            shift: None,
        })
    }

    pub fn tras(q: usize) -> Self {
        PolicySpec::Tras(TrasParams {
            q,
            r: None,
            allowance: None,
            compensation: None,
            explore: 0.0,
            sides: Sides::Both,
        })
    }

    pub fn random(q: usize) -> Self {
        PolicySpec::Random(RandomParams {
            q,
            r: None,
            shift: None,
        })
    }

    pub fn mrandom(q: usize) -> Self {
        PolicySpec::Mrandom(MrandomParams {
            q,
            rule: DetectionRule::Max,
        })
    }

    pub fn oracle() -> Self {
        PolicySpec::Oracle(OracleParams::default())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PolicySpec::Mtssrp(_) => "mtssrp",
            PolicySpec::Tssrp(_) => "tssrp",
            PolicySpec::Tras(_) => "tras",
            PolicySpec::Random(_) => "random",
            PolicySpec::Mrandom(_) => "mrandom",
            PolicySpec::Oracle(_) => "oracle",
        }
    }

    /// Whether the statistics are per mode (as opposed to per sensor).
    pub fn per_mode(&self) -> bool {
        matches!(
            self,
            PolicySpec::Mtssrp(_) | PolicySpec::Mrandom(_) | PolicySpec::Oracle(_)
        )
    }

    /// Check the parameters against a bank and scenario magnitude.
    pub fn validate(&self, bank: &ModeBank, delta: f64) -> Result<(), PolicyError> {
        let (p, k) = (bank.dim(), bank.len());
        match self {
            PolicySpec::Mtssrp(m) => {
                check_budget(m.q, p)?;
                PlannerConfig {
                    q: m.q,
                    ks: m.ks,
                    solver: m.solver,
                    rng_seed: 0,
                }
                .validate(p, k)?;
                if m.solver == Solver::Sort && !bank.is_diagonal() {
                    return Err(PlannerError::NotDiagonal.into());
                }
                if matches!(m.solver, Solver::Random | Solver::Fixed) {
                    return Err(PlannerError::UnsupportedSolver(m.solver).into());
                }
                m.rule.validate(k)?;
            }
            PolicySpec::Tssrp(t) => {
                check_budget(t.q, p)?;
                check_top_r(t.r.unwrap_or(t.q), p)?;
                check_shift(t.shift.unwrap_or(delta))?;
            }
            PolicySpec::Tras(t) => {
                t.resolve(p, delta)?;
            }
            PolicySpec::Random(t) => {
                check_budget(t.q, p)?;
                check_top_r(t.r.unwrap_or(t.q), p)?;
                check_shift(t.shift.unwrap_or(delta))?;
            }
            PolicySpec::Mrandom(m) => {
                check_budget(m.q, p)?;
                m.rule.validate(k)?;
            }
            PolicySpec::Oracle(o) => o.rule.validate(k)?,
        }
        Ok(())
    }

    /// A fresh detector. `delta` supplies the default per-sensor shift.
    pub fn build(&self, bank: Arc<ModeBank>, delta: f64, seed: u64) -> Result<Box<dyn Detector>, PolicyError> {
        self.validate(&bank, delta)?;
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match *self {
            PolicySpec::Mtssrp(m) => Box::new(ModeDetector::new(
                bank,
                m.rule,
                ModePlanner::Thompson(PlannerConfig {
                    q: m.q,
                    ks: m.ks,
                    solver: m.solver,
                    rng_seed: seed,
                }),
                rng,
            )?),
            PolicySpec::Mrandom(m) => Box::new(ModeDetector::new(bank, m.rule, ModePlanner::Random(m.q), rng)?),
            PolicySpec::Oracle(o) => Box::new(ModeDetector::new(bank, o.rule, ModePlanner::Full, rng)?),
            PolicySpec::Tssrp(t) => Box::new(SensorSrDetector::new(
                &bank,
                t.q,
                t.r.unwrap_or(t.q),
                t.shift.unwrap_or(delta),
                SensorPlanner::Thompson,
                rng,
            )),
            PolicySpec::Random(t) => Box::new(SensorSrDetector::new(
                &bank,
                t.q,
                t.r.unwrap_or(t.q),
                t.shift.unwrap_or(delta),
                SensorPlanner::Random,
                rng,
            )),
            PolicySpec::Tras(t) => Box::new(TrasDetector::new(&bank, t.resolve(bank.dim(), delta)?, rng)),
        })
    }
}

fn check_shift(shift: f64) -> Result<(), BaselineError> {
    if !shift.is_finite() || shift == 0.0 {
        return Err(BaselineError::BadShift(shift));
    }
    Ok(())
}

/// A sequential policy: plan, observe, repeat.
pub trait Detector: Send {
    /// Coordinates to read at the next tick.
    fn plan(&self) -> &SamplingPlan;
    /// Values at the current plan's coordinates; advances one tick and
    /// prepares the next plan.
    fn observe(&mut self, values: &[f64]);
    /// Ticks observed so far.
    fn time(&self) -> u64;
    /// Stopping statistic, compared against the threshold.
    fn statistic(&self) -> f64;
    /// Mode reported if an alarm is raised now.
    fn isolate(&self) -> Option<usize>;
    /// Local statistics: one per mode, or one per sensor.
    fn local_statistics(&self) -> Vec<f64>;
    /// Modes ranked by statistic, when the policy keeps per-mode statistics.
    fn mode_ranking(&self) -> Option<Vec<usize>>;
    fn box_clone(&self) -> Box<dyn Detector>;
}

impl Clone for Box<dyn Detector> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone, Copy)]
enum ModePlanner {
    Thompson(PlannerConfig),
    Random(usize),
    Full,
}

/// Per-mode SR statistics with a pluggable sampling rule (MTSSRP,
/// MRandom, Oracle).
#[derive(Debug, Clone)]
struct ModeDetector {
    bank: Arc<ModeBank>,
    state: MonitorState,
    rule: DetectionRule,
    planner: ModePlanner,
    rng: ChaCha8Rng,
    plan: SamplingPlan,
    llrs: Vec<f64>,
}

impl ModeDetector {
    fn new(
        bank: Arc<ModeBank>,
        rule: DetectionRule,
        planner: ModePlanner,
        rng: ChaCha8Rng,
    ) -> Result<Self, PolicyError> {
        let k = bank.len();
        let mut d = Self {
            state: MonitorState::new(k),
            plan: SamplingPlan::full(bank.dim()),
            llrs: vec![0.0; k],
            bank,
            rule,
            planner,
            rng,
        };
        d.plan = d.next_plan()?;
        Ok(d)
    }

    fn next_plan(&mut self) -> Result<SamplingPlan, PlannerError> {
        match self.planner {
            ModePlanner::Thompson(cfg) => plan_next(&self.state, &self.bank, &cfg, &mut self.rng),
            ModePlanner::Random(q) => Ok(plan_random(self.bank.dim(), q, &mut self.rng)),
            ModePlanner::Full => Ok(SamplingPlan::full(self.bank.dim())),
        }
    }
}

impl Detector for ModeDetector {
    fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    fn observe(&mut self, values: &[f64]) {
        self.bank.all_llrs_into(self.plan.indices(), values, &mut self.llrs);
        self.state.apply_llrs(&self.llrs);
        let next = self.next_plan().expect("planner validated at construction");
        self.state.last_plan = Some(std::mem::replace(&mut self.plan, next));
    }

    fn time(&self) -> u64 {
        self.state.t
    }

    fn statistic(&self) -> f64 {
        self.state.rule_statistic(self.rule)
    }

    fn isolate(&self) -> Option<usize> {
        self.state.isolate()
    }

    fn local_statistics(&self) -> Vec<f64> {
        self.state.values()
    }

    fn mode_ranking(&self) -> Option<Vec<usize>> {
        Some(self.state.ranking())
    }

    fn box_clone(&self) -> Box<dyn Detector> {
        Box::new(self.clone())
    }
}

/// Map from the sensor with the largest statistic to a mode.
#[derive(Debug, Clone)]
struct SensorIsolation {
    dominant: Arc<Vec<Option<usize>>>,
}

impl SensorIsolation {
    fn new(bank: &ModeBank) -> Self {
        Self {
            dominant: Arc::new(bank.dominant_modes()),
        }
    }

    /// Mode of the highest-ranked sensor that belongs to some mode's support.
    fn isolate(&self, t: u64, values: &[f64]) -> Option<usize> {
        if t == 0 {
            return None;
        }
        top_indices(values, values.len())
            .into_iter()
            .find_map(|j| self.dominant[j])
    }
}

#[derive(Debug, Clone, Copy)]
enum SensorPlanner {
    Thompson,
    Random,
}

/// Per-sensor SR statistics (TSSRP, Random).
#[derive(Debug, Clone)]
struct SensorSrDetector {
    alternatives: Arc<Vec<CoordLlr>>,
    stats: SensorSr,
    q: usize,
    r: usize,
    planner: SensorPlanner,
    rng: ChaCha8Rng,
    plan: SamplingPlan,
    scratch: Vec<f64>,
    values: Vec<f64>,
    isolation: SensorIsolation,
}

impl SensorSrDetector {
    fn new(bank: &ModeBank, q: usize, r: usize, shift: f64, planner: SensorPlanner, rng: ChaCha8Rng) -> Self {
        let p = bank.dim();
        let mut d = Self {
            alternatives: Arc::new(shifted_alternatives(bank.base(), shift)),
            stats: SensorSr::new(p),
            q,
            r,
            planner,
            rng,
            plan: SamplingPlan::full(p),
            scratch: Vec::with_capacity(p),
            values: vec![f64::NEG_INFINITY; p],
            isolation: SensorIsolation::new(bank),
        };
        d.plan = d.next_plan();
        d
    }

    fn next_plan(&mut self) -> SamplingPlan {
        match self.planner {
            SensorPlanner::Thompson => {
                self.stats
                    .thompson_scores(&self.alternatives, &mut self.rng, &mut self.scratch);
                let mut idx = top_indices(&self.scratch, self.q);
                idx.sort_unstable();
                SamplingPlan::new(idx, self.alternatives.len(), Solver::Sort).expect("distinct indices")
            }
            SensorPlanner::Random => plan_random(self.alternatives.len(), self.q, &mut self.rng),
        }
    }
}

impl Detector for SensorSrDetector {
    fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    fn observe(&mut self, values: &[f64]) {
        self.stats.update(&self.alternatives, self.plan.indices(), values);
        self.stats.values_into(&mut self.values);
        self.plan = self.next_plan();
    }

    fn time(&self) -> u64 {
        self.stats.t
    }

    fn statistic(&self) -> f64 {
        top_r_sum(&self.values, self.r)
    }

    fn isolate(&self) -> Option<usize> {
        self.isolation.isolate(self.stats.t, &self.values)
    }

    fn local_statistics(&self) -> Vec<f64> {
        self.values.clone()
    }

    fn mode_ranking(&self) -> Option<Vec<usize>> {
        None
    }

    fn box_clone(&self) -> Box<dyn Detector> {
        Box::new(self.clone())
    }
}

/// Top-R CUSUM with compensation (TRAS).
#[derive(Debug, Clone)]
struct TrasDetector {
    state: TrasState,
    params: TrasResolved,
    rng: ChaCha8Rng,
    plan: SamplingPlan,
    stats: Vec<f64>,
    isolation: SensorIsolation,
}

impl TrasDetector {
    fn new(bank: &ModeBank, params: TrasResolved, mut rng: ChaCha8Rng) -> Self {
        let state = TrasState::new(bank.base()).with_sides(params.sides);
        let stats = state.statistics();
        let plan = tras_plan(&stats, &params, &mut rng);
        Self {
            state,
            params,
            rng,
            plan,
            stats,
            isolation: SensorIsolation::new(bank),
        }
    }
}

impl Detector for TrasDetector {
    fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    fn observe(&mut self, values: &[f64]) {
        self.state.update(&self.params, self.plan.indices(), values);
        self.state.statistics_into(&mut self.stats);
        self.plan = tras_plan(&self.stats, &self.params, &mut self.rng);
    }

    fn time(&self) -> u64 {
        self.state.t
    }

    fn statistic(&self) -> f64 {
        top_r_sum(&self.stats, self.params.r)
    }

    fn isolate(&self) -> Option<usize> {
        self.isolation.isolate(self.state.t, &self.stats)
    }

    fn local_statistics(&self) -> Vec<f64> {
        self.stats.clone()
    }

    fn mode_ranking(&self) -> Option<Vec<usize>> {
        None
    }

    fn box_clone(&self) -> Box<dyn Detector> {
        Box::new(self.clone())
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Alarm tick, if the statistic crossed the threshold within the horizon.
    pub stop: Option<u64>,
    pub isolated: Option<usize>,
    /// Ticks simulated.
    pub ticks: u64,
    /// Statistic at the last simulated tick.
    pub statistic: f64,
}

/// One tick of a recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub statistic: f64,
    pub plan: Vec<usize>,
    pub locals: Vec<f64>,
    pub ranking: Option<Vec<usize>>,
}

/// A detector wired to its data stream, resumable tick by tick.
#[derive(Clone)]
pub struct SimPath {
    detector: Box<dyn Detector>,
    gate: ObservationGate,
    buf: Vec<f64>,
    last: f64,
    /// (tick, statistic) at every new running maximum.
    ladder: Vec<(u64, f64)>,
}

impl SimPath {
    pub fn new(detector: Box<dyn Detector>, gate: ObservationGate) -> Self {
        Self {
            detector,
            gate,
            buf: Vec::new(),
            last: f64::NEG_INFINITY,
            ladder: Vec::new(),
        }
    }

    pub fn detector(&self) -> &dyn Detector {
        self.detector.as_ref()
    }

    pub fn gate(&self) -> &ObservationGate {
        &self.gate
    }

    pub fn time(&self) -> u64 {
        self.detector.time()
    }

    /// Advance one tick and return the new statistic.
    pub fn step(&mut self) -> f64 {
        let t = self.detector.time() + 1;
        self.gate.read(t, self.detector.plan().indices(), &mut self.buf);
        self.detector.observe(&self.buf);
        let s = self.detector.statistic();
        if self.ladder.last().is_none_or(|&(_, m)| s > m) {
            self.ladder.push((t, s));
        }
        self.last = s;
        s
    }

    /// First tick whose statistic reached `threshold`, if already simulated.
    pub fn crossing(&self, threshold: f64) -> Option<u64> {
        let i = self.ladder.partition_point(|&(_, m)| m < threshold);
        self.ladder.get(i).map(|&(t, _)| t)
    }

    /// Run length at `threshold`, extending the path up to `limit` ticks.
    /// `None` means no crossing by `limit`.
    pub fn run_length(&mut self, threshold: f64, limit: u64) -> Option<u64> {
        if let Some(t) = self.crossing(threshold) {
            return (t <= limit).then_some(t);
        }
        while self.time() < limit {
            if self.step() >= threshold {
                return Some(self.time());
            }
        }
        None
    }

    /// Run until alarm or `horizon`, optionally recording every tick.
    pub fn run(&mut self, threshold: f64, horizon: u64, mut trace: Option<&mut Vec<TraceRow>>) -> RunOutcome {
        while self.time() < horizon {
            let plan = trace.as_ref().map(|_| self.detector.plan().indices().to_vec());
            let s = self.step();
            if let (Some(rows), Some(plan)) = (trace.as_deref_mut(), plan) {
                rows.push(TraceRow {
                    t: self.time(),
                    statistic: s,
                    plan,
                    locals: self.detector.local_statistics(),
                    ranking: self.detector.mode_ranking(),
                });
            }
            if s >= threshold {
                return RunOutcome {
                    stop: Some(self.time()),
                    isolated: self.detector.isolate(),
                    ticks: self.time(),
                    statistic: s,
                };
            }
        }
        RunOutcome {
            stop: None,
            isolated: None,
            ticks: self.time(),
            statistic: self.last,
        }
    }
}

/// A policy on a scenario, with seeds derived per replication.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub bank: Arc<ModeBank>,
    pub scenario: ScenarioSpec,
    pub policy: PolicySpec,
    pub master_seed: u64,
}

impl Experiment {
    pub fn new(
        bank: Arc<ModeBank>,
        scenario: ScenarioSpec,
        policy: PolicySpec,
        master_seed: u64,
    ) -> Result<Self, PolicyError> {
        policy.validate(&bank, scenario.delta)?;
        Ok(Self {
            bank,
            scenario,
            policy,
            master_seed,
        })
    }

    /// Seed of the data stream; shared by every policy for the same replication.
    pub fn data_seed(&self, rep: u64) -> u64 {
        derive_seed(self.master_seed, &[tag("data"), rep])
    }

    pub fn policy_seed(&self, rep: u64) -> u64 {
        derive_seed(self.master_seed, &[tag("policy"), tag(self.policy.kind()), rep])
    }

    pub fn detector(&self, rep: u64) -> Box<dyn Detector> {
        self.policy
            .build(Arc::clone(&self.bank), self.scenario.delta, self.policy_seed(rep))
            .expect("policy validated at construction")
    }

    /// Replication `rep` on the scenario's post-change stream.
    pub fn path(&self, rep: u64, logging: bool) -> SimPath {
        let stream = self.scenario.stream(Arc::clone(&self.bank), self.data_seed(rep));
        SimPath::new(self.detector(rep), ObservationGate::new(stream, logging))
    }

    /// Replication `rep` on an in-control stream.
    pub fn null_path(&self, rep: u64, logging: bool) -> SimPath {
        let stream = StreamGenerator::null(Arc::clone(&self.bank), self.data_seed(rep));
        SimPath::new(self.detector(rep), ObservationGate::new(stream, logging))
    }

    pub fn true_modes(&self, rep: u64) -> Vec<usize> {
        self.scenario.true_modes_for(self.bank.len(), self.data_seed(rep))
    }
}
