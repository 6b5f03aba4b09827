//! On-disk layout of a run directory.
//!
//! ```text
//! <out>/config.json
//! <out>/seed_<n>/curve.csv      evaluation rows
//! <out>/seed_<n>/stops.csv      one row per training episode
//! <out>/seed_<n>/positions.csv  final positions of recent evaluation episodes
//! <out>/seed_<n>/snapshot.csv   (q, loss) probe of the buffer at the snapshot step
//! <out>/seed_<n>/summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use least_core::maze::SizeClass;
use least_core::replay::ProbeSamples;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::config::{ExperimentConfig, Mode};
use crate::run::{CurveRow, RunRecord, StopRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mode: Mode,
    pub maze: SizeClass,
    pub total_steps: u64,
    pub episodes: usize,
    pub forced_stops: usize,
    pub final_score: Option<f64>,
    pub max_score: Option<f64>,
    pub clamped_actions: u64,
}

#[derive(Serialize, Deserialize)]
struct PositionRow {
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRow {
    q: f64,
    loss: f64,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

pub const CURVE_HEADER: [&str; 12] = [
    "step",
    "score_mean",
    "score_std",
    "K",
    "sigma",
    "beta",
    "frac_lowq_lowloss",
    "frac_lowq_highloss",
    "frac_highq_lowloss",
    "frac_highq_highloss",
    "fau_actor",
    "fau_critic",
];

pub fn write_run(dir: &Path, config: &ExperimentConfig, seed: u64, record: &RunRecord) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("curve.csv"), &record.rows, &CURVE_HEADER)?;
    write_csv(
        &dir.join("stops.csv"),
        &record.stops,
        &["episode", "global_step", "stop_step", "forced"],
    )?;
    let positions: Vec<PositionRow> = record.final_positions.iter().map(|p| PositionRow { x: p[0], y: p[1] }).collect();
    write_csv(&dir.join("positions.csv"), &positions, &["x", "y"])?;
    if let Some(s) = &record.snapshot {
        let rows: Vec<SnapshotRow> = s.q.iter().zip(&s.loss).map(|(&q, &loss)| SnapshotRow { q, loss }).collect();
        write_csv(&dir.join("snapshot.csv"), &rows, &["q", "loss"])?;
    }
    let summary = RunSummary {
        seed,
        mode: config.mode,
        maze: config.maze,
        total_steps: config.total_steps,
        episodes: record.stops.len(),
        forced_stops: record.forced_stops(),
        final_score: analysis::final_score(&record.rows, 1),
        max_score: record.rows.iter().map(|r| r.score_mean).reduce(f64::max),
        clamped_actions: record.clamped_actions,
    };
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

pub fn read_run(dir: &Path) -> anyhow::Result<RunRecord> {
    let rows: Vec<CurveRow> = read_csv(&dir.join("curve.csv"))?;
    let stops: Vec<StopRow> = read_csv(&dir.join("stops.csv"))?;
    let positions: Vec<PositionRow> = read_csv(&dir.join("positions.csv"))?;
    let snap_path = dir.join("snapshot.csv");
    let snapshot = if snap_path.exists() {
        let rows: Vec<SnapshotRow> = read_csv(&snap_path)?;
        Some(ProbeSamples {
            q: rows.iter().map(|r| r.q).collect(),
            loss: rows.iter().map(|r| r.loss).collect(),
        })
    } else {
        None
    };
    let summary: Option<RunSummary> = fs::read(dir.join("summary.json"))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    Ok(RunRecord {
        rows,
        stops,
        final_positions: positions.iter().map(|p| [p.x, p.y]).collect(),
        snapshot,
        clamped_actions: summary.map_or(0, |s| s.clamped_actions),
    })
}

/// Seed directories under `out`, sorted by seed.
pub fn seed_dirs(out: &Path) -> anyhow::Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(out).with_context(|| format!("listing {}", out.display()))? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|n| n.parse::<u64>().ok());
        if let (Some(seed), true) = (seed, path.is_dir()) {
            found.push((seed, path));
        }
    }
    found.sort();
    Ok(found)
}

/// All runs under `out`, sorted by seed.
pub fn read_runs(out: &Path) -> anyhow::Result<Vec<RunRecord>> {
    seed_dirs(out)?.iter().map(|(_, p)| read_run(p)).collect()
}

pub fn write_grid(path: &Path, grid: &[Vec<usize>]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in grid {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
