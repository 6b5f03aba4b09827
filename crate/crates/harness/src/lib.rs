//! Seeded vanilla-vs-LEAST experiments on the point-mass mazes.
//!
//! [`run::run_training`] executes one seed and returns a [`run::RunRecord`];
//! [`io`] persists records as CSV/JSON and [`analysis`] aggregates them.

pub mod analysis;
pub mod config;
pub mod io;
pub mod run;

pub use config::{ExperimentConfig, Mode};
pub use run::{run_training, RunRecord};

use std::path::Path;

use rayon::prelude::*;

/// Runs every configured seed (in parallel across seeds) and writes each to
/// `<out>/seed_<n>`.
pub fn run_seeds(config: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<RunRecord>> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), serde_json::to_vec_pretty(config)?)?;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = io::seed_dir(out, seed);
            let record = run_training(config, seed, Some(&dir))?;
            io::write_run(&dir, config, seed, &record)?;
            Ok(record)
        })
        .collect()
}
