//! Stop-controller checks against brute-force and closed-form oracles.

use least_core::controller::{
    histogram_entropy, median, ControllerConfig, NoiseConfig, NoiseSchedule, ResizeOutcome, StopController,
    ENTROPY_BINS,
};
use least_core::td3::StepProbe;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe(q: f64, g: f64) -> StepProbe {
    StepProbe {
        q_hat: q,
        td_error_mag: g,
    }
}

fn controller(cfg: ControllerConfig) -> StopController {
    StopController::new(cfg).unwrap()
}

fn push_episode(c: &mut StopController, qs: &[f64], gs: &[f64]) {
    for (i, (&q, &g)) in qs.iter().zip(gs).enumerate() {
        c.record_step(i, probe(q, g)).unwrap();
    }
    c.close_episode();
}

/// Fill rule written directly over a dense grid with `None` for missing cells.
fn brute_force_epsilon(grid: &[Vec<Option<f64>>], col: usize) -> Option<f64> {
    let mut fill: Option<f64> = None;
    for row in grid {
        for (j, cell) in row.iter().enumerate() {
            if j >= col {
                if let Some(v) = cell {
                    fill = Some(fill.map_or(*v, |f: f64| f.min(*v)));
                }
            }
        }
    }
    let fill = fill?;
    let mut column: Vec<f64> = grid.iter().map(|r| r[col].unwrap_or(fill)).collect();
    column.sort_by(f64::total_cmp);
    let n = column.len();
    Some(if n % 2 == 1 { column[n / 2] } else { 0.5 * (column[n / 2 - 1] + column[n / 2]) })
}

#[test]
fn truncated_episode_uses_later_column_minimum() {
    let len = 4;
    let mut c = controller(ControllerConfig {
        max_episode_len: len,
        initial_k: 3,
        ..Default::default()
    });
    let episodes: [&[f64]; 3] = [&[5.0, 4.0, 3.0, 2.5], &[6.0], &[7.0, 1.0, 9.0]];
    let mut grid = Vec::new();
    for e in episodes {
        push_episode(&mut c, e, &vec![1.0; e.len()]);
        grid.push((0..len).map(|j| e.get(j).copied()).collect::<Vec<_>>());
    }
    for col in 0..len {
        assert_eq!(c.column_threshold(col), brute_force_epsilon(&grid, col), "column {col}");
    }
    assert_eq!(c.column_threshold(1), Some(1.0));
}

proptest! {
    #[test]
    fn fill_rule_matches_brute_force(seed in any::<u64>(), k in 1usize..8, len in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = controller(ControllerConfig { max_episode_len: len, initial_k: k, ..Default::default() });
        let mut grid = Vec::new();
        for _ in 0..k + 2 {
            let n = rng.random_range(1..=len);
            let qs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            push_episode(&mut c, &qs, &vec![1.0; n]);
            grid.push((0..len).map(|j| qs.get(j).copied()).collect::<Vec<_>>());
        }
        let window = &grid[grid.len() - k..];
        for col in 0..len {
            prop_assert_eq!(c.column_threshold(col), brute_force_epsilon(window, col));
        }
    }
}

/// Three one-step episodes giving column 0 the values `[q_min, eps, q_max]`
/// and a `bg` median of 1, with `λ = 1`.
fn truth_table_controller(q_min: f64, eps: f64, q_max: f64) -> StopController {
    let mut c = controller(ControllerConfig {
        max_episode_len: 2,
        initial_k: 3,
        omega_scale: 1.0,
        ..Default::default()
    });
    for q in [q_min, eps, q_max] {
        push_episode(&mut c, &[q], &[1.0]);
    }
    c
}

#[test]
fn stop_rule_truth_table() {
    // (eps, omega, bounds, expected threshold)
    let rows = [
        (2.0, 0.5, (0.0, 3.0), 1.0),
        (2.0, 2.0, (0.0, 3.0), 3.0),
        (-2.0, 0.5, (-3.0, 0.0), -3.0),
        (-2.0, 2.0, (-3.0, 0.0), -1.0),
    ];
    let mut cases = 0;
    for (eps, omega, (lo, hi), t) in rows {
        let mut c = truth_table_controller(lo, eps, hi);
        for (q, stop) in [(t - 0.25, true), (t, false), (t + 0.25, false)] {
            let v = c.evaluate(0, 0, probe(q, 1.0 / omega)).unwrap();
            assert_eq!((v.epsilon, v.omega, v.q_min, v.q_max), (eps, omega, lo, hi));
            assert_eq!(v.threshold, t);
            assert_eq!(v.stop, stop, "eps {eps} omega {omega} q {q}");
            cases += 1;
        }
    }
    assert_eq!(cases, 12);
}

/// Plateau column: 35 values below the median, 80 tied at it, 35 above.
fn plateau_column(rng: &mut ChaCha8Rng, m: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..35).map(|_| rng.random_range(0.8 * m..m)).collect();
    v.extend(std::iter::repeat_n(m, 80));
    v.extend((0..35).map(|_| rng.random_range(m * 1.0001..1.2 * m)));
    v
}

#[test]
fn median_ignores_ten_times_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(150);
    for _ in 0..20 {
        let clean = plateau_column(&mut rng, 2.0);
        let mut dirty = clean.clone();
        let mut idx: Vec<usize> = (0..150).collect();
        for i in 0..8 {
            let j = rng.random_range(i..150);
            idx.swap(i, j);
            dirty[idx[i]] *= 10.0;
        }
        let threshold = |values: &[f64]| {
            let mut c = controller(ControllerConfig {
                max_episode_len: 1,
                initial_k: 150,
                ..Default::default()
            });
            for &q in values {
                push_episode(&mut c, &[q], &[1.0]);
            }
            c.column_threshold(0).unwrap()
        };
        assert_eq!(threshold(&dirty) - threshold(&clean), 0.0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&dirty) - mean(&clean) > 0.3 * mean(&clean));
    }
}

#[test]
fn entropy_matches_independent_histogram() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut c = controller(ControllerConfig {
        max_episode_len: 10,
        initial_k: 20,
        ..Default::default()
    });
    let mut all = Vec::new();
    for _ in 0..20 {
        let n = rng.random_range(1..=10);
        let qs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..1.0f64).powi(3)).collect();
        all.extend_from_slice(&qs);
        push_episode(&mut c, &qs, &vec![0.0; n]);
    }
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = [0f64; ENTROPY_BINS];
    for &v in &all {
        let mut b = ((v - lo) / (hi - lo) * ENTROPY_BINS as f64).floor() as usize;
        if b == ENTROPY_BINS {
            b -= 1;
        }
        counts[b] += 1.0;
    }
    let n = all.len() as f64;
    let want: f64 = counts.iter().filter(|&&k| k > 0.0).map(|&k| -(k / n) * (k / n).ln()).sum();
    assert!((c.buffer_entropy().unwrap() - want).abs() < 1e-12);
    assert!((histogram_entropy(&all, ENTROPY_BINS).unwrap() - want).abs() < 1e-12);
}

fn resize_controller(initial_k: usize, k_max: usize, baseline: Option<f64>) -> StopController {
    controller(ControllerConfig {
        max_episode_len: 1,
        initial_k,
        k_max: Some(k_max),
        entropy_baseline: baseline,
        resize_amount: 10,
        entropy_check_interval: 100,
        ..Default::default()
    })
}

#[test]
fn constant_buffer_never_grows() {
    for baseline in [None, Some(0.5)] {
        let mut c = resize_controller(10, 40, baseline);
        for _ in 0..40 {
            push_episode(&mut c, &[-1.5], &[0.2]);
        }
        assert_eq!(c.buffer_entropy().unwrap(), 0.0);
        for t in 1..=2000 {
            assert_eq!(c.maybe_resize(t), ResizeOutcome::Unchanged);
        }
        assert_eq!(c.k(), 10);
        assert_eq!(c.entropy_baseline(), baseline);
    }
}

#[test]
fn bimodal_buffer_grows_once_per_interval_until_cap() {
    let mut c = resize_controller(10, 40, Some(0.5));
    for i in 0..40 {
        push_episode(&mut c, &[if i % 2 == 0 { 0.0 } else { 1.0 }], &[0.2]);
    }
    let h = c.buffer_entropy().unwrap();
    assert!((h - 2f64.ln()).abs() < 1e-15 && h > 1.05 * 0.5);
    let mut grows = Vec::new();
    for t in 1..=600 {
        match c.maybe_resize(t) {
            ResizeOutcome::Grew { from, to } => grows.push((t, from, to)),
            ResizeOutcome::Shrank { .. } => panic!("shrank at {t}"),
            ResizeOutcome::Unchanged => {}
        }
    }
    assert_eq!(grows, vec![(100, 10, 20), (200, 20, 30), (300, 30, 40)]);
    assert_eq!(c.k(), 40);
}

#[test]
fn growth_threshold_is_strict_and_arithmetic_matches() {
    let h = 2f64.ln();
    let mut at = resize_controller(150, 300, Some(h));
    let mut above = resize_controller(150, 300, Some(h / 1.1));
    for c in [&mut at, &mut above] {
        for i in 0..150 {
            push_episode(c, &[(i % 2) as f64], &[0.2]);
        }
    }
    assert_eq!(at.maybe_resize(100), ResizeOutcome::Unchanged);
    assert_eq!(above.maybe_resize(100), ResizeOutcome::Grew { from: 150, to: 160 });
}

#[test]
fn window_shrinks_back_toward_initial_k() {
    let mut c = resize_controller(10, 40, Some(0.5));
    for i in 0..40 {
        push_episode(&mut c, &[(i % 2) as f64], &[0.2]);
    }
    c.maybe_resize(100);
    c.maybe_resize(200);
    assert_eq!(c.k(), 30);
    for _ in 0..40 {
        push_episode(&mut c, &[3.0], &[0.2]);
    }
    assert_eq!(c.maybe_resize(300), ResizeOutcome::Shrank { from: 30, to: 20 });
    assert_eq!(c.maybe_resize(400), ResizeOutcome::Shrank { from: 20, to: 10 });
    assert_eq!(c.maybe_resize(500), ResizeOutcome::Unchanged);
}

#[test]
fn baseline_is_measured_at_first_informative_check() {
    let mut c = resize_controller(10, 40, None);
    push_episode(&mut c, &[1.0], &[0.1]);
    assert_eq!(c.maybe_resize(100), ResizeOutcome::Unchanged);
    assert_eq!(c.entropy_baseline(), None);
    push_episode(&mut c, &[2.0], &[0.1]);
    assert_eq!(c.maybe_resize(200), ResizeOutcome::Unchanged);
    assert_eq!(c.entropy_baseline(), Some(2f64.ln()));
}

#[test]
fn noise_schedule_worked_examples() {
    let cfg = NoiseConfig::default();
    assert_eq!(cfg.sigma_for(0.0), 0.1);
    assert_eq!(cfg.sigma_for(0.5), 0.125);
    assert_eq!(cfg.sigma_for(1.0), 0.25 / (1.0 + (-5f64).exp()));
    assert!(cfg.sigma_for(1.0) < 0.25);
    let grid: Vec<f64> = (0..=10).map(|i| cfg.sigma_for(i as f64 / 10.0)).collect();
    assert!(grid.windows(2).all(|w| w[0] <= w[1]));
}

proptest! {
    #[test]
    fn sigma_is_monotone_and_bounded(
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        tau in 0.1f64..20.0,
        mu in 0.1f64..20.0,
        base in 0.01f64..0.2,
        extra in 0.01f64..0.5,
    ) {
        let cfg = NoiseConfig { sigma_upper: base + extra, sigma_base: base, temp_tau: tau, temp_mu: mu, ..Default::default() };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cfg.sigma_for(lo) <= cfg.sigma_for(hi));
        prop_assert!(cfg.sigma_for(hi) >= base);
        prop_assert!(cfg.sigma_for(hi) < base + extra);
    }

    #[test]
    fn beta_counts_early_forced_stops(events in proptest::collection::vec((0usize..50, any::<bool>()), 0..120)) {
        let cfg = NoiseConfig::default();
        let mut s = NoiseSchedule::new(cfg.clone()).unwrap();
        for &(step, forced) in &events {
            s.record_episode_end(step, forced);
        }
        let tail = &events[events.len().saturating_sub(cfg.window)..];
        let early = tail.iter().filter(|&&(step, forced)| forced && step < cfg.early_step_threshold).count();
        prop_assert_eq!(s.beta(), early as f64 / cfg.window as f64);
    }
}

#[test]
fn median_of_shuffled_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut v: Vec<f64> = (1..=101).map(f64::from).collect();
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    assert_eq!(median(&v), Some(51.0));
}
