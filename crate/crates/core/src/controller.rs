//! Adaptive early-stop controller.
//!
//! Two rolling matrices hold, for the most recent `K` finished episodes, the
//! per-step min-critic value (`bq`) and TD-error magnitude (`bg`). For intra-
//! episode step `i` the controller derives
//!
//! * `ε_i`: the median of column `i` of `bq`,
//! * `ω_i = λ · median(bg[:, i]) / G_i` with `G_i` the current TD-error magnitude,
//!
//! and stops the episode when `q̂ < clip(ω_i ε_i, qmin_i, qmax_i)` for `ε_i ≥ 0`,
//! or `q̂ < clip(ε_i / ω_i, qmin_i, qmax_i)` for `ε_i < 0`.
//!
//! Episodes are variable length; a missing cell at column `j` is filled with
//! the minimum over every recorded value in columns `≥ j` before taking a
//! median. The active window `K` grows or shrinks by `h` episodes depending
//! on the histogram entropy of `bq`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::td3::StepProbe;

/// Lower bound on the TD-error magnitude in the denominator of `ω`.
pub const OMEGA_FLOOR: f64 = 1e-8;
/// Histogram resolution of the entropy estimate.
pub const ENTROPY_BINS: usize = 32;

/// Median of a nonempty slice; even counts average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Shannon entropy (nats) of an equal-width histogram over `[min, max]`.
pub fn histogram_entropy(values: &[f64], bins: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("entropy input"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) || bins < 2 {
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// The sign-aware, clipped threshold for one step.
pub fn effective_threshold(omega: f64, epsilon: f64, q_min: f64, q_max: f64) -> f64 {
    let raw = if epsilon >= 0.0 { omega * epsilon } else { epsilon / omega };
    raw.max(q_min).min(q_max)
}

/// True when the current estimate falls strictly below the effective threshold.
pub fn stop_decision(q_hat: f64, omega: f64, epsilon: f64, q_min: f64, q_max: f64) -> bool {
    q_hat < effective_threshold(omega, epsilon, q_min, q_max)
}

/// Rolling per-step statistics of recent episodes.
///
/// Finished episodes are stored oldest first, each as the prefix of steps it
/// actually ran. Up to `retained` rows are kept; statistics read only the
/// most recent `window` of them, so the window can widen again after a shrink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStatMatrix {
    max_len: usize,
    window: usize,
    retained: usize,
    rows: VecDeque<Vec<f64>>,
    open: Vec<f64>,
}

impl EpisodeStatMatrix {
    pub fn new(max_len: usize, window: usize, retained: usize) -> Result<Self> {
        if max_len == 0 || window == 0 {
            return Err(Error::InvalidConfig("matrix dims must be positive".into()));
        }
        if retained < window {
            return Err(Error::InvalidConfig("retained rows must cover the window".into()));
        }
        Ok(Self {
            max_len,
            window,
            retained,
            rows: VecDeque::with_capacity(retained),
            open: Vec::with_capacity(max_len),
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Current number of episodes the statistics look at (`K`).
    pub fn capacity(&self) -> usize {
        self.window
    }

    pub fn set_capacity(&mut self, window: usize) -> Result<()> {
        if window == 0 || window > self.retained {
            return Err(Error::InvalidConfig(format!(
                "window {window} outside 1..={}",
                self.retained
            )));
        }
        self.window = window;
        Ok(())
    }

    /// Number of finished episodes inside the window.
    pub fn rows(&self) -> usize {
        self.rows.len().min(self.window)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn active(&self) -> impl Iterator<Item = &Vec<f64>> + '_ {
        self.rows.iter().skip(self.rows.len() - self.rows())
    }

    /// Writes the current episode's value at `step`. Steps must be written as
    /// a prefix: overwriting an existing step or appending the next one.
    pub fn record(&mut self, step: usize, value: f64) -> Result<()> {
        if step >= self.max_len {
            return Err(Error::StepOutOfRange {
                step,
                max_len: self.max_len,
            });
        }
        match step.cmp(&self.open.len()) {
            std::cmp::Ordering::Less => self.open[step] = value,
            std::cmp::Ordering::Equal => self.open.push(value),
            std::cmp::Ordering::Greater => {
                return Err(Error::InvalidConfig(format!(
                    "step {step} written before step {}",
                    self.open.len()
                )))
            }
        }
        Ok(())
    }

    pub fn open_row(&self) -> &[f64] {
        &self.open
    }

    /// Commits the open row as a finished episode. Empty rows are dropped.
    pub fn close_row(&mut self) {
        if self.open.is_empty() {
            return;
        }
        let row = std::mem::replace(&mut self.open, Vec::with_capacity(self.max_len));
        self.rows.push_back(row);
        while self.rows.len() > self.retained {
            self.rows.pop_front();
        }
    }

    /// Cell of a windowed row (0 = oldest in the window); `None` if the episode
    /// ended before `col`.
    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.active().nth(row).and_then(|r| r.get(col).copied())
    }

    /// Recorded values of column `col` inside the window.
    pub fn column_valid(&self, col: usize) -> Vec<f64> {
        self.active().filter_map(|r| r.get(col).copied()).collect()
    }

    /// `suffix[j]` = minimum recorded value over columns `≥ j`.
    fn suffix_minima(&self) -> Vec<Option<f64>> {
        let mut col_min = vec![None::<f64>; self.max_len];
        for row in self.active() {
            for (j, &v) in row.iter().enumerate() {
                col_min[j] = Some(col_min[j].map_or(v, |m: f64| m.min(v)));
            }
        }
        let mut suffix = vec![None; self.max_len];
        let mut acc: Option<f64> = None;
        for j in (0..self.max_len).rev() {
            acc = match (acc, col_min[j]) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            suffix[j] = acc;
        }
        suffix
    }

    fn filled_with(&self, col: usize, fill: Option<f64>) -> Option<Vec<f64>> {
        let fill = fill?;
        Some(
            self.active()
                .map(|r| r.get(col).copied().unwrap_or(fill))
                .collect(),
        )
    }

    /// Column `col` with missing cells substituted by the fill rule. `None`
    /// when neither column `col` nor any later column holds a value.
    pub fn filled_column(&self, col: usize) -> Option<Vec<f64>> {
        if col >= self.max_len {
            return None;
        }
        self.filled_with(col, self.suffix_minima()[col])
    }

    pub fn column_median(&self, col: usize) -> Option<f64> {
        self.filled_column(col).and_then(|c| median(&c))
    }

    /// Min and max of column `col`: over recorded cells when any exist,
    /// otherwise over the filled column.
    pub fn column_bounds(&self, col: usize) -> Option<(f64, f64)> {
        let valid = self.column_valid(col);
        let values = if valid.is_empty() {
            self.filled_column(col)?
        } else {
            valid
        };
        Some(bounds(&values))
    }

    /// Every recorded value inside the window.
    pub fn valid_values(&self) -> Vec<f64> {
        self.active().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn entropy(&self) -> Result<f64> {
        histogram_entropy(&self.valid_values(), ENTROPY_BINS)
    }

    /// Per-column `(median, bounds)` for every step, computed in one pass.
    fn column_summaries(&self) -> Vec<Option<ColumnSummary>> {
        let suffix = self.suffix_minima();
        (0..self.max_len)
            .map(|col| {
                let filled = self.filled_with(col, suffix[col])?;
                let valid = self.column_valid(col);
                let (lo, hi) = bounds(if valid.is_empty() { &filled } else { &valid });
                Some(ColumnSummary {
                    median: median(&filled)?,
                    min: lo,
                    max: hi,
                })
            })
            .collect()
    }
}

fn bounds(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ColumnSummary {
    median: f64,
    min: f64,
    max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Maximum episode length `L`.
    pub max_episode_len: usize,
    /// Initial window `K`.
    pub initial_k: usize,
    /// Defaults to `initial_k`.
    pub k_min: Option<usize>,
    /// Defaults to `2 · initial_k`.
    pub k_max: Option<usize>,
    /// Scale `λ` applied to `ω`.
    pub omega_scale: f64,
    /// Global step from which stops may be issued.
    pub start_step: u64,
    /// Entropy baseline `H̄`; measured when the controller activates if unset.
    pub entropy_baseline: Option<f64>,
    /// Overflow tolerance on the entropy baseline.
    pub overflow_rate: f64,
    /// Episodes added or removed per resize (`h`).
    pub resize_amount: usize,
    /// Global steps between entropy checks (`c`).
    pub entropy_check_interval: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            max_episode_len: 50,
            initial_k: 150,
            k_min: None,
            k_max: None,
            omega_scale: 0.5,
            start_step: 0,
            entropy_baseline: None,
            overflow_rate: 0.05,
            resize_amount: 10,
            entropy_check_interval: 1000,
        }
    }
}

impl ControllerConfig {
    pub fn k_min(&self) -> usize {
        self.k_min.unwrap_or(self.initial_k)
    }

    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(2 * self.initial_k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.max_episode_len == 0 || self.initial_k == 0 {
            return bad("episode length and initial K must be positive".into());
        }
        let (lo, hi) = (self.k_min(), self.k_max());
        if !(lo >= 1 && lo <= self.initial_k && self.initial_k <= hi) {
            return bad(format!("need 1 <= k_min ({lo}) <= initial K ({}) <= k_max ({hi})", self.initial_k));
        }
        if !(self.omega_scale > 0.0) {
            return bad("omega scale must be positive".into());
        }
        if self.overflow_rate < 0.0 {
            return bad("overflow rate must be nonnegative".into());
        }
        if self.resize_amount == 0 || self.entropy_check_interval == 0 {
            return bad("resize amount and check interval must be positive".into());
        }
        if let Some(h) = self.entropy_baseline {
            if !(h > 0.0) {
                return bad("entropy baseline must be positive".into());
            }
        }
        Ok(())
    }
}

/// Everything that went into one stop verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopVerdict {
    pub stop: bool,
    pub epsilon: f64,
    pub omega: f64,
    pub threshold: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResizeOutcome {
    Grew { from: usize, to: usize },
    Shrank { from: usize, to: usize },
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopController {
    config: ControllerConfig,
    bq: EpisodeStatMatrix,
    bg: EpisodeStatMatrix,
    baseline: Option<f64>,
    #[serde(skip)]
    cache: Option<StatCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct StatCache {
    q: Vec<Option<ColumnSummary>>,
    g: Vec<Option<ColumnSummary>>,
}

impl StopController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        let (l, k, retained) = (config.max_episode_len, config.initial_k, config.k_max());
        Ok(Self {
            bq: EpisodeStatMatrix::new(l, k, retained)?,
            bg: EpisodeStatMatrix::new(l, k, retained)?,
            baseline: config.entropy_baseline,
            cache: None,
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn bq(&self) -> &EpisodeStatMatrix {
        &self.bq
    }

    pub fn bg(&self) -> &EpisodeStatMatrix {
        &self.bg
    }

    /// Current window size `K`.
    pub fn k(&self) -> usize {
        self.bq.capacity()
    }

    pub fn entropy_baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn is_active(&self, global_step: u64) -> bool {
        global_step >= self.config.start_step
    }

    /// Records the fresh transition's probe at intra-episode step `step`.
    pub fn record_step(&mut self, step: usize, probe: StepProbe) -> Result<()> {
        self.bq.record(step, probe.q_hat)?;
        self.bg.record(step, probe.td_error_mag)
    }

    /// Commits the running episode to both matrices.
    pub fn close_episode(&mut self) {
        self.bq.close_row();
        self.bg.close_row();
        self.cache = None;
    }

    fn cache(&mut self) -> &StatCache {
        if self.cache.is_none() {
            self.cache = Some(StatCache {
                q: self.bq.column_summaries(),
                g: self.bg.column_summaries(),
            });
        }
        self.cache.as_ref().expect("just filled")
    }

    /// `ε_i`, or `None` while the matrix holds nothing usable for this step.
    pub fn column_threshold(&mut self, step: usize) -> Option<f64> {
        self.cache().q.get(step).copied().flatten().map(|c| c.median)
    }

    /// `(qmin_i, qmax_i)` of `bq` column `step`.
    pub fn column_bounds(&mut self, step: usize) -> Option<(f64, f64)> {
        self.cache().q.get(step).copied().flatten().map(|c| (c.min, c.max))
    }

    /// `ω_i = λ · median(bg[:, i]) / max(G_i, floor)`.
    pub fn compute_omega(&mut self, step: usize, td_error_mag: f64) -> Option<f64> {
        let scale = self.config.omega_scale;
        let med = self.cache().g.get(step).copied().flatten()?.median;
        Some(scale * med / td_error_mag.max(OMEGA_FLOOR))
    }

    /// Full verdict for the current step, or `None` while the controller is
    /// inert (before the start step or without usable statistics).
    pub fn evaluate(&mut self, global_step: u64, step: usize, probe: StepProbe) -> Option<StopVerdict> {
        if !self.is_active(global_step) {
            return None;
        }
        let epsilon = self.column_threshold(step)?;
        let (q_min, q_max) = self.column_bounds(step)?;
        let omega = self.compute_omega(step, probe.td_error_mag)?;
        let threshold = effective_threshold(omega, epsilon, q_min, q_max);
        Some(StopVerdict {
            stop: probe.q_hat < threshold,
            epsilon,
            omega,
            threshold,
            q_min,
            q_max,
        })
    }

    /// Whether to stop and reset the running episode now.
    pub fn should_stop(&mut self, global_step: u64, step: usize, probe: StepProbe) -> bool {
        self.evaluate(global_step, step, probe).is_some_and(|v| v.stop)
    }

    /// Entropy of all recorded `bq` values in the window.
    pub fn buffer_entropy(&self) -> Result<f64> {
        self.bq.entropy()
    }

    /// Entropy check, run every `entropy_check_interval` global steps once
    /// active. Grows `K` by `h` (up to `k_max`) when the entropy exceeds
    /// `(1 + overflow) · H̄`, otherwise shrinks it by `h` toward the floor.
    pub fn maybe_resize(&mut self, global_step: u64) -> ResizeOutcome {
        if !self.is_active(global_step) || global_step % self.config.entropy_check_interval != 0 {
            return ResizeOutcome::Unchanged;
        }
        let Ok(h_t) = self.buffer_entropy() else {
            return ResizeOutcome::Unchanged;
        };
        let baseline = match self.baseline {
            Some(b) => b,
            None => {
                if h_t > 0.0 {
                    self.baseline = Some(h_t);
                }
                return ResizeOutcome::Unchanged;
            }
        };
        let from = self.k();
        let floor = self.config.k_min().max(self.config.initial_k);
        let to = if h_t > (1.0 + self.config.overflow_rate) * baseline {
            (from + self.config.resize_amount).min(self.config.k_max())
        } else {
            from.saturating_sub(self.config.resize_amount).max(floor)
        };
        if to == from {
            return ResizeOutcome::Unchanged;
        }
        self.bq.set_capacity(to).expect("bounded by retained rows");
        self.bg.set_capacity(to).expect("bounded by retained rows");
        self.cache = None;
        if to > from {
            ResizeOutcome::Grew { from, to }
        } else {
            ResizeOutcome::Shrank { from, to }
        }
    }

    /// Writes matrices and parameters as JSON for offline threshold plots.
    pub fn dump_json(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Upper bound `σ̄`.
    pub sigma_upper: f64,
    /// Base exploration noise `σ*`.
    pub sigma_base: f64,
    pub temp_tau: f64,
    pub temp_mu: f64,
    /// Number of recent episodes `m` in the frequency estimate.
    pub window: usize,
    /// A forced stop before this intra-episode step counts as early (`e`).
    pub early_step_threshold: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_upper: 0.25,
            sigma_base: 0.1,
            temp_tau: 10.0,
            temp_mu: 5.0,
            window: 50,
            early_step_threshold: 20,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_base > 0.0 && self.sigma_base < self.sigma_upper) {
            return Err(Error::InvalidConfig("need 0 < sigma_base < sigma_upper".into()));
        }
        if !(self.temp_tau > 0.0 && self.temp_mu > 0.0) {
            return Err(Error::InvalidConfig("noise temperatures must be positive".into()));
        }
        if self.window == 0 || self.early_step_threshold == 0 {
            return Err(Error::InvalidConfig("noise window and early threshold must be positive".into()));
        }
        Ok(())
    }

    /// `max(σ̄ / (1 + exp(−β τ + μ)), σ*)`.
    pub fn sigma_for(&self, beta: f64) -> f64 {
        let logistic = self.sigma_upper / (1.0 + (-beta * self.temp_tau + self.temp_mu).exp());
        logistic.max(self.sigma_base)
    }
}

/// Exploration noise driven by the recent frequency of early forced stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    config: NoiseConfig,
    recent: VecDeque<bool>,
}

impl NoiseSchedule {
    pub fn new(config: NoiseConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            recent: VecDeque::with_capacity(config.window),
            config,
        })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    /// Flags for the last `m` episodes, oldest first.
    pub fn recent_flags(&self) -> impl Iterator<Item = bool> + '_ {
        self.recent.iter().copied()
    }

    /// Fraction of the last `m` episodes that were forced to stop early.
    pub fn beta(&self) -> f64 {
        self.recent.iter().filter(|&&f| f).count() as f64 / self.config.window as f64
    }

    pub fn sigma(&self) -> f64 {
        self.config.sigma_for(self.beta())
    }

    pub fn record_episode_end(&mut self, stop_step: usize, was_forced_stop: bool) {
        if self.recent.len() == self.config.window {
            self.recent.pop_front();
        }
        self.recent
            .push_back(was_forced_stop && stop_step < self.config.early_step_threshold);
    }
}
