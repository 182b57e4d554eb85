use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mtssrp_harness::benchmark::{calibrate_all, run_benchmark_with_cache, with_workers, CalibrationCache};
use mtssrp_harness::config::BenchmarkConfig;
use mtssrp_harness::export::{export, trajectory_csv, trajectory_name};
use mtssrp_harness::replay::replay;

#[derive(Parser)]
#[command(
    name = "mtssrp",
    version,
    about = "Partially observed multi-mode change detection benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate thresholds for every (policy, delta) cell.
    Calibrate(Common),
    /// Calibrate, simulate and export the configured delta grid.
    Run(Common),
    /// Like `run`, over the delta grid given on the command line.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated change magnitudes.
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
    },
    /// Re-run one archived replication and write its trajectory.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Archive directory; defaults to the config's output directory.
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rep: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<BenchmarkConfig> {
        let mut cfg = BenchmarkConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(reps) = self.reps {
            cfg.replications = reps;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cfg: &BenchmarkConfig) -> Result<()> {
    let cache_path = cfg.cache_path();
    let mut cache = CalibrationCache::load(&cache_path)?;
    let result = run_benchmark_with_cache(cfg, &mut cache)?;
    cache.save(&cache_path)?;
    let dir = cfg.out_dir();
    export(&result, &dir)?;
    for row in &result.summary {
        let accuracy = row.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"));
        println!(
            "{:<10} delta={:<5} A={:<9.4} delay={:.2} (sd {:.2}, se {:.2}) accuracy={} censored={:.3}",
            row.policy,
            row.delta,
            row.threshold,
            row.mean_delay,
            row.sd_delay,
            row.se_delay,
            accuracy,
            row.censoring_rate
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Calibrate(common) => {
            let cfg = common.load()?;
            let cache_path = cfg.cache_path();
            let mut cache = CalibrationCache::load(&cache_path)?;
            let records = with_workers(cfg.workers, || calibrate_all(&cfg, &mut cache))??;
            cache.save(&cache_path)?;
            for c in &records {
                println!(
                    "{:<10} delta={:<5} A={:.4} ARL0={:.2} (se {:.2}) converged={}",
                    c.policy, c.delta, c.threshold, c.arl0, c.arl0_se, c.converged
                );
            }
            println!("wrote {}", cache_path.display());
        }
        Command::Run(common) => run(&common.load()?)?,
        Command::Sweep { common, deltas } => {
            let mut cfg = common.load()?;
            cfg.delta_grid = deltas;
            cfg.validate()?;
            run(&cfg)?;
        }
        Command::Replay {
            common,
            archive,
            policy,
            delta,
            rep,
        } => {
            let cfg = common.load()?;
            let archive = archive.unwrap_or_else(|| cfg.out_dir());
            let replayed = replay(&archive, &policy, delta, rep)?;
            let out = common.out.unwrap_or(archive);
            std::fs::create_dir_all(&out)?;
            let path = out.join(trajectory_name(rep));
            std::fs::write(&path, trajectory_csv(&replayed.trajectory.rows)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "replayed {policy} delta={delta} rep={rep}: stop={:?} isolated={:?}; wrote {}",
                replayed.record.stop,
                replayed.record.isolated,
                path.display()
            );
        }
    }
    Ok(())
}
