//! Benchmark harness: TOML-configured calibration and simulation runs,
//! CSV/JSON export and trajectory replay.

pub mod benchmark;
pub mod config;
pub mod export;
pub mod replay;

pub use benchmark::{run_benchmark, BenchmarkResult, RunRecord, SummaryRow};
pub use config::{BenchmarkConfig, PolicyEntry};
