//! Multi-mode Shiryaev–Roberts change detection and isolation for partially
//! observed high-dimensional streams, with Thompson-sampled sensor selection.
//!
//! The pieces, bottom up:
//!
//! - [`model`]: Gaussian models, the mode bank, and log-likelihood ratios on
//!   observed coordinates.
//! - [`monitor`]: the per-mode log-SR recursion, stopping rules and isolation.
//! - [`planner`]: choosing which `q` coordinates to observe next.
//! - [`baselines`]: per-sensor comparators (TSSRP, TRAS) and their steps.
//! - [`policy`]: every policy behind one [`policy::Detector`] interface plus
//!   the simulation loop.
//! - [`scenarios`]: simulation universes and the hidden-truth stream generator.
//! - [`calibrate`]: threshold search for a target in-control run length.

pub mod baselines;
pub mod calibrate;
pub mod model;
pub mod monitor;
pub mod planner;
pub mod policy;
pub mod scenarios;
pub mod seeds;

pub use model::{Covariance, GaussianModel, ModeBank, ModelError, Observation};
pub use monitor::{AlarmReport, DetectionConfig, DetectionRule, LogSr, MonitorState};
pub use planner::{PlannerConfig, SamplingPlan, Solver};
