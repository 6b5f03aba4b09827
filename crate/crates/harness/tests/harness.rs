//! End-to-end checks of the training loop, persistence, analysis and CLI.

use std::process::Command;

use least_core::maze::SizeClass;
use least_harness::analysis::{self, compare_runs, steps_to_score};
use least_harness::run::{CurveRow, RunRecord, StopRow};
use least_harness::{io, run_training, ExperimentConfig, Mode};

fn quick(mode: Mode, steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_maze(SizeClass::Small);
    cfg.mode = mode;
    cfg.total_steps = steps;
    cfg.warmup_steps = 300;
    cfg.eval_interval = 500;
    cfg.eval_episodes = 3;
    cfg.quadrant_sample_size = 256;
    cfg.fau_probe_size = 32;
    cfg.stop.t_start = Some(600);
    cfg
}

#[test]
fn same_seed_reproduces_curve_bitwise() {
    let cfg = quick(Mode::Least, 2000);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let rec = run_training(&cfg, 7, None).unwrap();
        io::write_run(dir, &cfg, 7, &rec).unwrap();
    }
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["curve.csv", "stops.csv", "positions.csv", "snapshot.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let other = run_training(&cfg, 8, None).unwrap();
    let first = io::read_run(a.path()).unwrap();
    assert_ne!(other.stops, first.stops);
}

#[test]
fn vanilla_never_forces_a_stop() {
    let rec = run_training(&quick(Mode::Vanilla, 2000), 1, None).unwrap();
    assert_eq!(rec.forced_stops(), 0);
    assert!(rec.stops.iter().all(|s| s.stop_step <= 50));
    assert!(rec.rows.iter().all(|r| r.beta == 0.0 && r.sigma == 0.1 && r.k == 150));
}

#[test]
fn least_matches_vanilla_until_the_controller_starts() {
    let mut v = quick(Mode::Vanilla, 1500);
    let mut l = quick(Mode::Least, 1500);
    v.stop.t_start = Some(10_000);
    l.stop.t_start = Some(10_000);
    let rv = run_training(&v, 3, None).unwrap();
    let rl = run_training(&l, 3, None).unwrap();
    assert_eq!(rv, rl);

    l.stop.t_start = Some(600);
    let early = run_training(&l, 3, None).unwrap();
    let cut = |r: &RunRecord| r.stops.iter().filter(|s| s.global_step < 600).cloned().collect::<Vec<_>>();
    assert_eq!(cut(&rv), cut(&early));
    assert!(early.stops.iter().filter(|s| s.forced).all(|s| s.global_step >= 600));
}

#[test]
fn least_run_emits_controller_series() {
    let rec = run_training(&quick(Mode::Least, 3000), 2, None).unwrap();
    assert_eq!(rec.rows.len(), 6);
    assert!(rec.forced_stops() > 0);
    for r in &rec.rows {
        assert!((0.1..0.25).contains(&r.sigma) && (0.0..=1.0).contains(&r.beta));
        assert!((150..=300).contains(&r.k));
        let total = r.frac_lowq_lowloss + r.frac_lowq_highloss + r.frac_highq_lowloss + r.frac_highq_highloss;
        assert!((total - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&r.fau_actor) && (0.0..=1.0).contains(&r.fau_critic));
    }
    assert!(rec.snapshot.as_ref().is_some_and(|s| s.len() == 1500));
}

#[test]
fn run_directory_round_trips() {
    let cfg = quick(Mode::Least, 1200);
    let rec = run_training(&cfg, 4, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::write_run(dir.path(), &cfg, 4, &rec).unwrap();
    assert_eq!(io::read_run(dir.path()).unwrap(), rec);
    let header = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), io::CURVE_HEADER.join(","));
}

fn synthetic(scores: &[f64], forced: usize, q: [f64; 2]) -> RunRecord {
    RunRecord {
        rows: scores
            .iter()
            .enumerate()
            .map(|(i, &s)| CurveRow {
                step: 1000 * (i as u64 + 1),
                score_mean: s,
                score_std: 0.0,
                k: 150,
                sigma: 0.1,
                beta: 0.0,
                frac_lowq_lowloss: 0.25,
                frac_lowq_highloss: 0.25,
                frac_highq_lowloss: 0.25,
                frac_highq_highloss: 0.25,
                fau_actor: 0.5,
                fau_critic: 0.5,
            })
            .collect(),
        stops: (0..forced)
            .map(|e| StopRow {
                episode: e as u64,
                global_step: e as u64,
                stop_step: 1,
                forced: true,
            })
            .collect(),
        final_positions: vec![],
        snapshot: Some(least_core::replay::ProbeSamples {
            q: q.to_vec(),
            loss: vec![0.0, 1.0],
        }),
        clamped_actions: 0,
    }
}

#[test]
fn comparison_of_five_synthetic_seeds() {
    let vanilla: Vec<RunRecord> = [10.0, 20.0, 30.0, 40.0, 50.0]
        .iter()
        .map(|&f| synthetic(&[0.0, f, f], 0, [0.0, 0.0]))
        .collect();
    let least: Vec<RunRecord> = [60.0, 70.0, 80.0, 90.0, 100.0]
        .iter()
        .map(|&f| synthetic(&[0.0, f, f], 4, [0.0, 2.0]))
        .collect();
    let cmp = compare_runs(&vanilla, &least, 2);
    assert_eq!(cmp.vanilla.final_scores, vec![10.0, 20.0, 30.0, 40.0, 50.0]);
    assert_eq!(cmp.vanilla.final_mean, 30.0);
    assert!((cmp.vanilla.final_std - 200f64.sqrt()).abs() < 1e-12);
    assert_eq!(cmp.least.final_mean, 80.0);
    assert_eq!(cmp.score_gap, 50.0);
    assert_eq!(cmp.target, 30.0);
    assert_eq!(cmp.vanilla.steps_to_target, Some(2000));
    assert_eq!(cmp.least.steps_to_target, Some(2000));
    assert_eq!(cmp.least.forced_stops_mean, 4.0);
    // Split from the second arm: q mean 1, loss mean 0.5.
    assert_eq!(cmp.vanilla.quadrants, Some([0.5, 0.5, 0.0, 0.0]));
    assert_eq!(cmp.least.quadrants, Some([0.5, 0.0, 0.0, 0.5]));
    assert!(analysis::format_comparison(&cmp).contains("score gap"));
    assert_eq!(steps_to_score(&vanilla[0].rows, 1e9), None);
}

#[test]
fn cli_run_compare_positions() {
    let exe = env!("CARGO_BIN_EXE_least");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"maze":"small","warmup_steps":200,"eval_interval":400,"eval_episodes":2,"quadrant_sample_size":64,"fau_probe_size":16}"#,
    )
    .unwrap();
    for mode in ["vanilla", "least"] {
        let out = Command::new(exe)
            .args(["run", "--config", cfg_path.to_str().unwrap(), "--mode", mode, "--seeds", "0..1", "--steps", "800", "--out"])
            .arg(tmp.path().join(mode))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(tmp.path().join(mode).join("seed_1").join("curve.csv").exists());
    }
    let out = Command::new(exe)
        .arg("compare")
        .arg("--vanilla")
        .arg(tmp.path().join("vanilla"))
        .arg("--least")
        .arg(tmp.path().join("least"))
        .arg("--out")
        .arg(tmp.path().join("cmp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("vanilla"));
    assert!(tmp.path().join("cmp").join("compare.csv").exists());

    let grid = tmp.path().join("grid.csv");
    let out = Command::new(exe)
        .arg("positions")
        .arg("--runs")
        .arg(tmp.path().join("least"))
        .arg("--out")
        .arg(&grid)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(grid).unwrap();
    assert_eq!(text.lines().count(), 8);
    let total: usize = text.lines().flat_map(|l| l.split(',')).map(|c| c.parse::<usize>().unwrap()).sum();
    assert_eq!(total, 2 * 2 * 2);

    let bad = Command::new(exe).args(["run", "--seeds", "3..1", "--out"]).arg(tmp.path().join("x")).output().unwrap();
    assert!(!bad.status.success());
}
