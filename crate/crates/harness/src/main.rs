use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use least_core::maze::SizeClass;
use least_harness::{analysis, io, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "least", about = "Vanilla TD3 vs adaptive early stopping on point-mass mazes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one arm over a set of seeds.
    Run {
        /// JSON experiment config. Defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Maze size, overriding the config.
        #[arg(long)]
        maze: Option<SizeClass>,
        /// Inclusive range `a..b` or a comma list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize two arms written by `run`.
    Compare {
        #[arg(long)]
        vanilla: PathBuf,
        #[arg(long)]
        least: PathBuf,
        /// Evaluations averaged into each run's final score.
        #[arg(long, default_value_t = 5)]
        final_window: usize,
        /// Also write the summary as JSON and CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count final evaluation positions per maze cell.
    Positions {
        #[arg(long)]
        runs: PathBuf,
        /// Output CSV grid; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seeds(spec: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range `{spec}`");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            mode,
            maze,
            seeds,
            steps,
            out,
        } => {
            let mut cfg = match (&config, maze) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, Some(m)) => ExperimentConfig::for_maze(m),
                (None, None) => ExperimentConfig::default(),
            };
            if let Some(m) = maze {
                cfg.maze = m;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Some(s) = steps {
                cfg.total_steps = s;
            }
            cfg.output_dir = Some(out.clone());
            cfg.validate()?;
            let started = Instant::now();
            let records = least_harness::run_seeds(&cfg, &out)?;
            for (seed, rec) in cfg.seeds.iter().zip(&records) {
                println!(
                    "seed {seed}: final score {:.2}, episodes {}, forced stops {}",
                    analysis::final_score(&rec.rows, 1).unwrap_or(f64::NAN),
                    rec.stops.len(),
                    rec.forced_stops()
                );
            }
            println!("wrote {} in {:.1}s", out.display(), started.elapsed().as_secs_f64());
        }
        Command::Compare {
            vanilla,
            least,
            final_window,
            out,
        } => {
            let v = io::read_runs(&vanilla)?;
            let l = io::read_runs(&least)?;
            if v.is_empty() || l.is_empty() {
                bail!("each arm needs at least one seed directory");
            }
            let cmp = analysis::compare_runs(&v, &l, final_window);
            print!("{}", analysis::format_comparison(&cmp));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("compare.json"), serde_json::to_vec_pretty(&cmp)?)?;
                let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
                w.write_record(["arm", "seeds", "final_mean", "final_std", "max_mean_score", "steps_to_target", "target"])?;
                for (name, a) in [("vanilla", &cmp.vanilla), ("least", &cmp.least)] {
                    w.write_record([
                        name.to_string(),
                        a.seeds.to_string(),
                        a.final_mean.to_string(),
                        a.final_std.to_string(),
                        a.max_mean_score.to_string(),
                        a.steps_to_target.map_or_else(String::new, |s| s.to_string()),
                        cmp.target.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
        Command::Positions { runs, out } => {
            let cfg_path = runs.join("config.json");
            if !cfg_path.exists() {
                bail!("{} not found", cfg_path.display());
            }
            let layout = ExperimentConfig::load(&cfg_path)?.maze_layout()?;
            let records = io::read_runs(&runs)?;
            let grid = analysis::position_histogram(&layout, &records);
            match out {
                Some(path) => io::write_grid(&path, &grid)?,
                None => {
                    for row in &grid {
                        println!("{}", row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
                    }
                }
            }
        }
    }
    Ok(())
}
