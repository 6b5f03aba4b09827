//! Post-run aggregation: sample-efficiency steps, arm comparison, position counts.

use least_core::maze::MazeLayout;
use least_core::replay;
use serde::{Deserialize, Serialize};

use crate::run::{CurveRow, RunRecord};

/// First evaluation step whose mean score reaches `target`.
pub fn steps_to_score(rows: &[CurveRow], target: f64) -> Option<u64> {
    rows.iter().find(|r| r.score_mean >= target).map(|r| r.step)
}

/// Mean of the last `window` evaluation scores.
pub fn final_score(rows: &[CurveRow], window: usize) -> Option<f64> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    Some(tail.iter().map(|r| r.score_mean).sum::<f64>() / tail.len() as f64)
}

/// Seed-averaged learning curve over the evaluation steps all records share.
pub fn mean_curve(records: &[RunRecord]) -> Vec<CurveRow> {
    let Some(n) = records.iter().map(|r| r.rows.len()).min() else {
        return Vec::new();
    };
    let k = records.len() as f64;
    (0..n)
        .map(|i| {
            let rows: Vec<&CurveRow> = records.iter().map(|r| &r.rows[i]).collect();
            let avg = |f: fn(&CurveRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            CurveRow {
                step: rows[0].step,
                score_mean: avg(|r| r.score_mean),
                score_std: mean_std(&rows.iter().map(|r| r.score_mean).collect::<Vec<_>>()).1,
                k: (rows.iter().map(|r| r.k as f64).sum::<f64>() / k).round() as usize,
                sigma: avg(|r| r.sigma),
                beta: avg(|r| r.beta),
                frac_lowq_lowloss: avg(|r| r.frac_lowq_lowloss),
                frac_lowq_highloss: avg(|r| r.frac_lowq_highloss),
                frac_highq_lowloss: avg(|r| r.frac_highq_lowloss),
                frac_highq_highloss: avg(|r| r.frac_highq_highloss),
                fau_actor: avg(|r| r.fau_actor),
                fau_critic: avg(|r| r.fau_critic),
            }
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub seeds: usize,
    pub final_scores: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    /// Best value of the seed-averaged curve.
    pub max_mean_score: f64,
    /// First step where the seed-averaged curve reaches the comparison target.
    pub steps_to_target: Option<u64>,
    /// Snapshot quadrant fractions under the shared split, seed-averaged, in
    /// the order low/low, low-Q/high-loss, high-Q/low-loss, high/high.
    pub quadrants: Option<[f64; 4]>,
    pub forced_stops_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Vanilla's best seed-averaged score, the sample-efficiency target.
    pub target: f64,
    pub vanilla: ArmSummary,
    pub least: ArmSummary,
    /// `least.final_mean - vanilla.final_mean`.
    pub score_gap: f64,
}

fn arm_summary(records: &[RunRecord], window: usize, target: f64, quadrants: Option<[f64; 4]>) -> ArmSummary {
    let final_scores: Vec<f64> = records.iter().filter_map(|r| final_score(&r.rows, window)).collect();
    let (final_mean, final_std) = mean_std(&final_scores);
    let curve = mean_curve(records);
    ArmSummary {
        seeds: records.len(),
        final_mean,
        final_std,
        final_scores,
        max_mean_score: curve.iter().map(|r| r.score_mean).fold(f64::NEG_INFINITY, f64::max),
        steps_to_target: steps_to_score(&curve, target),
        quadrants,
        forced_stops_mean: records.iter().map(|r| r.forced_stops() as f64).sum::<f64>() / records.len().max(1) as f64,
    }
}

/// Shared-split quadrant fractions. Seeds are paired by position; each pair's
/// split comes from the LEAST snapshot means.
pub fn shared_split_quadrants(vanilla: &[RunRecord], least: &[RunRecord]) -> Option<([f64; 4], [f64; 4])> {
    let mut v_sum = [0.0; 4];
    let mut l_sum = [0.0; 4];
    let mut n = 0usize;
    for (v, l) in vanilla.iter().zip(least) {
        let (Some(vs), Some(ls)) = (&v.snapshot, &l.snapshot) else {
            continue;
        };
        let Ok(split) = ls.means() else { continue };
        let (Ok(vq), Ok(lq)) = (replay::classify(vs, split), replay::classify(ls, split)) else {
            continue;
        };
        for i in 0..4 {
            v_sum[i] += vq.fractions()[i];
            l_sum[i] += lq.fractions()[i];
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let k = n as f64;
    Some((v_sum.map(|x| x / k), l_sum.map(|x| x / k)))
}

/// Compares two arms. `final_window` evaluations at the end of each run make
/// up its final score.
pub fn compare_runs(vanilla: &[RunRecord], least: &[RunRecord], final_window: usize) -> Comparison {
    let target = mean_curve(vanilla)
        .iter()
        .map(|r| r.score_mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let quads = shared_split_quadrants(vanilla, least);
    let v = arm_summary(vanilla, final_window, target, quads.map(|q| q.0));
    let l = arm_summary(least, final_window, target, quads.map(|q| q.1));
    Comparison {
        target,
        score_gap: l.final_mean - v.final_mean,
        vanilla: v,
        least: l,
    }
}

/// Final-position counts per layout cell, indexed `[row][col]`.
pub fn position_histogram(layout: &MazeLayout, records: &[RunRecord]) -> Vec<Vec<usize>> {
    let points: Vec<[f64; 2]> = records.iter().flat_map(|r| r.final_positions.iter().copied()).collect();
    layout.cell_histogram(&points)
}

pub fn format_comparison(c: &Comparison) -> String {
    let fmt_steps = |s: Option<u64>| s.map_or_else(|| "never".to_string(), |v| v.to_string());
    let fmt_quad = |q: Option<[f64; 4]>| {
        q.map_or_else(
            || "n/a".to_string(),
            |q| format!("{:.3} {:.3} {:.3} {:.3}", q[0], q[1], q[2], q[3]),
        )
    };
    let mut out = String::new();
    out.push_str(&format!("target score (vanilla max of mean curve): {:.2}\n", c.target));
    out.push_str("arm      seeds  final_mean  final_std  max_mean  steps_to_target  forced_stops  quadrants(ll lh hl hh)\n");
    for (name, a) in [("vanilla", &c.vanilla), ("least", &c.least)] {
        out.push_str(&format!(
            "{name:<8} {:>5}  {:>10.2}  {:>9.2}  {:>8.2}  {:>15}  {:>12.1}  {}\n",
            a.seeds,
            a.final_mean,
            a.final_std,
            a.max_mean_score,
            fmt_steps(a.steps_to_target),
            a.forced_stops_mean,
            fmt_quad(a.quadrants),
        ));
    }
    out.push_str(&format!("score gap (least - vanilla): {:.2}\n", c.score_gap));
    out
}
