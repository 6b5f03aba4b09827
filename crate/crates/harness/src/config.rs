//! Experiment configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use least_core::controller::{ControllerConfig, NoiseConfig};
use least_core::maze::{MazeConfig, MazeLayout, SizeClass};
use least_core::td3::Td3Config;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vanilla,
    Least,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Least => "least",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "least" => Ok(Mode::Least),
            other => bail!("unknown mode `{other}` (expected vanilla or least)"),
        }
    }
}

/// Stop-controller knobs under their conventional short names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopParams {
    /// Scale on the TD-error ratio.
    pub lambda: f64,
    /// Global step at which stopping starts. Overrides `t_start_fraction`.
    pub t_start: Option<u64>,
    pub t_start_fraction: f64,
    /// Initial number of episodes in the statistics window.
    #[serde(rename = "K")]
    pub k: usize,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub gamma_ov: f64,
    pub h: usize,
    pub c: u64,
    pub entropy_baseline: Option<f64>,
}

impl Default for StopParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            t_start: None,
            t_start_fraction: 0.15,
            k: 150,
            k_min: None,
            k_max: None,
            gamma_ov: 0.05,
            h: 10,
            c: 1000,
            entropy_baseline: None,
        }
    }
}

/// Exploration-noise knobs under their conventional short names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub sigma_bar: f64,
    pub sigma_star: f64,
    pub tau: f64,
    pub mu: f64,
    pub m: usize,
    pub e: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        let d = NoiseConfig::default();
        Self {
            sigma_bar: d.sigma_upper,
            sigma_star: d.sigma_base,
            tau: d.temp_tau,
            mu: d.temp_mu,
            m: d.window,
            e: d.early_step_threshold,
        }
    }
}

impl From<&NoiseParams> for NoiseConfig {
    fn from(p: &NoiseParams) -> Self {
        NoiseConfig {
            sigma_upper: p.sigma_bar,
            sigma_base: p.sigma_star,
            temp_tau: p.tau,
            temp_mu: p.mu,
            window: p.m,
            early_step_threshold: p.e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub maze: SizeClass,
    /// Layout file used instead of the bundled layout for `maze`.
    pub layout: Option<PathBuf>,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub output_dir: Option<PathBuf>,
    /// Uniform-random steps before the first update.
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub agent: Td3Config,
    pub stop: StopParams,
    pub noise: NoiseParams,
    pub dynamics: MazeConfig,
    /// States in the fixed FAU probe batch.
    pub fau_probe_size: usize,
    /// Buffer transitions sampled for the per-evaluation quadrant fractions.
    pub quadrant_sample_size: usize,
    /// Fraction of `total_steps` at which the full buffer is probed.
    pub snapshot_fraction: f64,
    /// Evaluation episodes whose final positions are kept.
    pub final_position_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_maze(SizeClass::Small)
    }
}

impl ExperimentConfig {
    /// Defaults for one maze, including its step budget.
    pub fn for_maze(maze: SizeClass) -> Self {
        let total_steps = match maze {
            SizeClass::Small => 100_000,
            SizeClass::Medium => 150_000,
            SizeClass::Large => 200_000,
        };
        Self {
            maze,
            layout: None,
            total_steps,
            seeds: (0..5).collect(),
            mode: Mode::Least,
            eval_interval: 2000,
            eval_episodes: 10,
            output_dir: None,
            warmup_steps: 5000,
            batch_size: 128,
            replay_capacity: 100_000,
            agent: Td3Config {
                hidden: vec![64, 64],
                discount: 0.95,
                ..Td3Config::default()
            },
            stop: StopParams::default(),
            noise: NoiseParams::default(),
            dynamics: MazeConfig::default(),
            fau_probe_size: 256,
            quadrant_sample_size: 2048,
            snapshot_fraction: 0.5,
            final_position_episodes: 50,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn maze_layout(&self) -> anyhow::Result<MazeLayout> {
        match &self.layout {
            Some(path) => Ok(MazeLayout::from_file(path)?),
            None => Ok(MazeLayout::builtin(self.maze)),
        }
    }

    pub fn t_start(&self) -> u64 {
        self.stop
            .t_start
            .unwrap_or_else(|| (self.stop.t_start_fraction * self.total_steps as f64).round() as u64)
    }

    pub fn snapshot_step(&self) -> u64 {
        (self.snapshot_fraction * self.total_steps as f64).round() as u64
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            max_episode_len: self.dynamics.max_episode_steps,
            initial_k: self.stop.k,
            k_min: self.stop.k_min,
            k_max: self.stop.k_max,
            omega_scale: self.stop.lambda,
            start_step: self.t_start(),
            entropy_baseline: self.stop.entropy_baseline,
            overflow_rate: self.stop.gamma_ov,
            resize_amount: self.stop.h,
            entropy_check_interval: self.stop.c,
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        (&self.noise).into()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.agent.validate()?;
        self.controller_config().validate()?;
        self.noise_config().validate()?;
        self.dynamics.validate()?;
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            bail!("eval_interval and eval_episodes must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            bail!("need 0 < batch_size <= replay_capacity");
        }
        if self.fau_probe_size == 0 || self.quadrant_sample_size == 0 {
            bail!("probe sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.snapshot_fraction) || !(0.0..=1.0).contains(&self.stop.t_start_fraction) {
            bail!("fractions must lie in [0, 1]");
        }
        Ok(())
    }
}
