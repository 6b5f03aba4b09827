//! Point-mass maze environments.
//!
//! World coordinates put the origin at the bottom-left corner of the grid.
//! Column `c` covers `x ∈ [c, c+1)·cell_size` and the text row `r` (counted
//! from the top) covers `y ∈ [rows-1-r, rows-r)·cell_size`.
//!
//! Layouts use a small text format:
//!
//! ```text
//! ; comment lines start with a semicolon
//! maze-layout 1
//! #######
//! #S...G#
//! #######
//! ```
//!
//! `#` is a wall, `.` free space, `S` the start cell and `G` the goal cell.
//! The grid must be rectangular and enclosed by walls.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version accepted in the `maze-layout` header line.
pub const LAYOUT_FORMAT_VERSION: u32 = 1;

const SMALL_LAYOUT: &str = include_str!("../layouts/small.txt");
const MEDIUM_LAYOUT: &str = include_str!("../layouts/medium.txt");
const LARGE_LAYOUT: &str = include_str!("../layouts/large.txt");

/// Gap left between the collider and a wall face after a blocked move.
const CONTACT_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            SizeClass::Small => SMALL_LAYOUT,
            SizeClass::Medium => MEDIUM_LAYOUT,
            SizeClass::Large => LARGE_LAYOUT,
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(SizeClass::Small),
            "medium" => Ok(SizeClass::Medium),
            "large" => Ok(SizeClass::Large),
            other => Err(Error::InvalidConfig(format!("unknown maze size `{other}`"))),
        }
    }
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Static maze geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeLayout {
    /// `walls[r][c]`, row 0 at the top as written in the layout file.
    walls: Vec<Vec<bool>>,
    cell_size: f64,
    start_cell: (usize, usize),
    goal_cell: (usize, usize),
    start_region: Aabb,
    goal_center: [f64; 2],
    goal_radius: f64,
    size_class: Option<SizeClass>,
}

impl MazeLayout {
    /// Parses a layout. `start_half_width` sets the start box around the
    /// start cell center.
    pub fn parse(
        text: &str,
        cell_size: f64,
        start_half_width: f64,
        goal_radius: f64,
        size_class: Option<SizeClass>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidConfig("cell_size must be positive".into()));
        }
        if !(goal_radius > 0.0 && goal_radius.is_finite()) {
            return Err(Error::InvalidConfig("goal_radius must be positive".into()));
        }
        if !(0.0..0.5).contains(&start_half_width) {
            return Err(Error::InvalidConfig(
                "start half width must lie in [0, 0.5) cells".into(),
            ));
        }
        let mut lines = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with(';'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Layout("missing header".into()))?;
        let version = header
            .strip_prefix("maze-layout ")
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Layout(format!("bad header `{header}`")))?;
        if version != LAYOUT_FORMAT_VERSION {
            return Err(Error::Layout(format!("unsupported layout version {version}")));
        }

        let mut walls = Vec::new();
        let mut start = None;
        let mut goal = None;
        for (r, line) in lines.enumerate() {
            let mut row = Vec::with_capacity(line.len());
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => row.push(true),
                    '.' => row.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(Error::Layout(format!("more than one `{ch}` cell")));
                        }
                        row.push(false);
                    }
                    other => {
                        return Err(Error::Layout(format!("unexpected character `{other}`")));
                    }
                }
            }
            walls.push(row);
        }
        let rows = walls.len();
        let cols = walls.first().map_or(0, Vec::len);
        if rows < 3 || cols < 3 {
            return Err(Error::Layout("grid must be at least 3x3".into()));
        }
        if walls.iter().any(|row| row.len() != cols) {
            return Err(Error::Layout("grid rows differ in length".into()));
        }
        let enclosed = (0..cols).all(|c| walls[0][c] && walls[rows - 1][c])
            && (0..rows).all(|r| walls[r][0] && walls[r][cols - 1]);
        if !enclosed {
            return Err(Error::Layout("grid border must be all walls".into()));
        }
        let start_cell = start.ok_or_else(|| Error::Layout("missing `S` cell".into()))?;
        let goal_cell = goal.ok_or_else(|| Error::Layout("missing `G` cell".into()))?;

        let mut layout = MazeLayout {
            walls,
            cell_size,
            start_cell,
            goal_cell,
            start_region: Aabb {
                min: [0.0; 2],
                max: [0.0; 2],
            },
            goal_center: [0.0; 2],
            goal_radius,
            size_class,
        };
        let sc = layout.cell_center(start_cell);
        let hw = start_half_width * cell_size;
        layout.start_region = Aabb {
            min: [sc[0] - hw, sc[1] - hw],
            max: [sc[0] + hw, sc[1] + hw],
        };
        layout.goal_center = layout.cell_center(goal_cell);
        if layout.shortest_path_len().is_none() {
            return Err(Error::Layout("goal is not reachable from start".into()));
        }
        Ok(layout)
    }

    /// Reads a layout file with the default geometry.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
        Self::parse(&text, 1.0, 0.25, 0.5, None)
    }

    /// One of the bundled layouts with the default geometry.
    pub fn builtin(size: SizeClass) -> Self {
        Self::parse(size.builtin_text(), 1.0, 0.25, 0.5, Some(size))
            .expect("bundled layouts are valid")
    }

    pub fn rows(&self) -> usize {
        self.walls.len()
    }

    pub fn cols(&self) -> usize {
        self.walls[0].len()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn size_class(&self) -> Option<SizeClass> {
        self.size_class
    }

    pub fn start_region(&self) -> Aabb {
        self.start_region
    }

    pub fn start_cell(&self) -> (usize, usize) {
        self.start_cell
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal_cell
    }

    pub fn goal_center(&self) -> [f64; 2] {
        self.goal_center
    }

    pub fn goal_radius(&self) -> f64 {
        self.goal_radius
    }

    /// World extent `(width, height)`.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.cols() as f64 * self.cell_size,
            self.rows() as f64 * self.cell_size,
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let [w, h] = self.extent();
        w.hypot(h)
    }

    /// Wall flag for a text-grid cell. Cells outside the grid count as walls.
    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls
            .get(row)
            .and_then(|r| r.get(col))
            .copied()
            .unwrap_or(true)
    }

    /// Wall flag addressed by world column and world row (counted from the bottom).
    fn is_wall_world(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.cols() as i64 || iy >= self.rows() as i64 {
            return true;
        }
        self.walls[self.rows() - 1 - iy as usize][ix as usize]
    }

    pub fn cell_center(&self, (row, col): (usize, usize)) -> [f64; 2] {
        [
            (col as f64 + 0.5) * self.cell_size,
            ((self.rows() - 1 - row) as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Text-grid cell `(row, col)` containing a world point, if inside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let ix = (p[0] / self.cell_size).floor();
        let iy = (p[1] / self.cell_size).floor();
        if !(ix >= 0.0 && iy >= 0.0 && ix < self.cols() as f64 && iy < self.rows() as f64) {
            return None;
        }
        Some((self.rows() - 1 - iy as usize, ix as usize))
    }

    /// Whether a point lies in a free cell.
    pub fn is_free_point(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_some_and(|(r, c)| !self.walls[r][c])
    }

    /// Whether a square of half-width `half` centered at `p` touches no wall cell.
    pub fn box_is_free(&self, p: [f64; 2], half: f64) -> bool {
        let cs = self.cell_size;
        let x0 = ((p[0] - half) / cs).floor() as i64;
        let x1 = ((p[0] + half) / cs).ceil() as i64 - 1;
        let y0 = ((p[1] - half) / cs).floor() as i64;
        let y1 = ((p[1] + half) / cs).ceil() as i64 - 1;
        (x0..=x1).all(|ix| (y0..=y1).all(|iy| !self.is_wall_world(ix, iy)))
    }

    /// BFS distances in cells from `from` to every reachable free cell.
    pub fn distances_from(&self, from: (usize, usize)) -> Vec<Vec<Option<usize>>> {
        let mut dist = vec![vec![None; self.cols()]; self.rows()];
        if self.is_wall(from.0, from.1) {
            return dist;
        }
        dist[from.0][from.1] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r][c].unwrap_or(0);
            for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
                if !self.is_wall(nr, nc) && dist[nr][nc].is_none() {
                    dist[nr][nc] = Some(d + 1);
                    queue.push_back((nr, nc));
                }
            }
        }
        dist
    }

    /// Shortest start-to-goal path length in cell moves.
    pub fn shortest_path_len(&self) -> Option<usize> {
        self.distances_from(self.start_cell)[self.goal_cell.0][self.goal_cell.1]
    }

    /// Free cells with exactly one free neighbour, excluding start and goal.
    pub fn dead_ends(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 1..self.rows() - 1 {
            for c in 1..self.cols() - 1 {
                if self.walls[r][c] || (r, c) == self.start_cell || (r, c) == self.goal_cell {
                    continue;
                }
                let open = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                    .iter()
                    .filter(|&&(nr, nc)| !self.walls[nr][nc])
                    .count();
                if open == 1 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Normalized score of a trajectory of positions: `100 · (d_start - d_best) / d_start`
    /// clipped at 0, where `d_best` is the closest approach to the goal. Entering
    /// the goal disc scores 100.
    pub fn normalized_score(&self, trajectory: &[[f64; 2]]) -> Result<f64> {
        let first = trajectory.first().ok_or(Error::Empty("trajectory"))?;
        let d_start = self.distance_to_goal(*first);
        let d_best = trajectory
            .iter()
            .map(|&p| self.distance_to_goal(p))
            .fold(f64::INFINITY, f64::min);
        if d_best <= self.goal_radius {
            return Ok(100.0);
        }
        if d_start <= 0.0 {
            return Ok(0.0);
        }
        Ok((100.0 * (d_start - d_best) / d_start).clamp(0.0, 100.0))
    }

    pub fn distance_to_goal(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.goal_center[0]).hypot(p[1] - self.goal_center[1])
    }

    /// Counts points per text-grid cell, indexed `[row][col]`. Points outside
    /// the grid are ignored.
    pub fn cell_histogram(&self, points: &[[f64; 2]]) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; self.cols()]; self.rows()];
        for &p in points {
            if let Some((r, c)) = self.cell_of(p) {
                counts[r][c] += 1;
            }
        }
        counts
    }
}

/// Last position of a trajectory.
pub fn final_position(trajectory: &[[f64; 2]]) -> Result<[f64; 2]> {
    trajectory.last().copied().ok_or(Error::Empty("trajectory"))
}

/// Dynamics constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeConfig {
    pub accel_gain: f64,
    pub speed_factor: f64,
    pub max_speed: f64,
    /// Half side of the square collider, in cells.
    pub collider_half_extent: f64,
    pub max_episode_steps: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            accel_gain: 0.25,
            speed_factor: 0.9,
            max_speed: 1.0,
            collider_half_extent: 0.125,
            max_episode_steps: 50,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.accel_gain) || !positive(self.max_speed) {
            return Err(Error::InvalidConfig("accel_gain and max_speed must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.speed_factor) {
            return Err(Error::InvalidConfig("speed_factor must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.collider_half_extent) {
            return Err(Error::InvalidConfig("collider half extent must lie in [0, 0.5)".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidConfig("max_episode_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MazeState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub step_count: usize,
}

/// How an episode step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOutcome {
    Running,
    /// The goal disc was reached.
    Terminal,
    /// The step cap was hit.
    Truncated,
}

impl StepOutcome {
    pub fn is_done(self) -> bool {
        self != StepOutcome::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: [f64; 4],
    pub reward: f64,
    pub outcome: StepOutcome,
}

/// A maze episode runner. One instance per worker.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    layout: MazeLayout,
    config: MazeConfig,
    state: MazeState,
    done: bool,
    trajectory: Vec<[f64; 2]>,
    clamped_actions: u64,
}

impl MazeEnv {
    pub fn new(layout: MazeLayout, config: MazeConfig) -> Result<Self> {
        config.validate()?;
        let h = config.collider_half_extent * layout.cell_size();
        let region = layout.start_region();
        for p in [region.min, region.max, [region.min[0], region.max[1]], [region.max[0], region.min[1]]] {
            if !layout.box_is_free(p, h) {
                return Err(Error::InvalidConfig("start region overlaps a wall".into()));
            }
        }
        let start = layout.cell_center(layout.start_cell());
        Ok(Self {
            layout,
            config,
            state: MazeState {
                position: start,
                velocity: [0.0; 2],
                step_count: 0,
            },
            done: true,
            trajectory: vec![start],
            clamped_actions: 0,
        })
    }

    pub fn builtin(size: SizeClass) -> Self {
        Self::new(MazeLayout::builtin(size), MazeConfig::default()).expect("default config is valid")
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    pub fn state(&self) -> &MazeState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Positions visited this episode, starting with the reset position.
    pub fn trajectory(&self) -> &[[f64; 2]] {
        &self.trajectory
    }

    /// Number of actions that had to be clamped into `[-1, 1]²`.
    pub fn clamped_actions(&self) -> u64 {
        self.clamped_actions
    }

    pub fn max_episode_steps(&self) -> usize {
        self.config.max_episode_steps
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 4] {
        let region = self.layout.start_region();
        let position = [
            region.min[0] + (region.max[0] - region.min[0]) * rng.random::<f64>(),
            region.min[1] + (region.max[1] - region.min[1]) * rng.random::<f64>(),
        ];
        self.state = MazeState {
            position,
            velocity: [0.0; 2],
            step_count: 0,
        };
        self.done = false;
        self.trajectory.clear();
        self.trajectory.push(position);
        self.observation()
    }

    /// Raw observation `[x, y, vx, vy]`.
    pub fn observation(&self) -> [f64; 4] {
        let s = &self.state;
        [s.position[0], s.position[1], s.velocity[0], s.velocity[1]]
    }

    /// Observation rescaled so positions span `[-1, 1]` and velocities are
    /// divided by the speed cap.
    pub fn normalize_observation(&self, obs: &[f64; 4]) -> [f64; 4] {
        let [w, h] = self.layout.extent();
        [
            2.0 * obs[0] / w - 1.0,
            2.0 * obs[1] / h - 1.0,
            obs[2] / self.config.max_speed,
            obs[3] / self.config.max_speed,
        ]
    }

    pub fn reward_at(&self, p: [f64; 2]) -> f64 {
        -self.layout.distance_to_goal(p) / self.layout.diagonal()
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let mut a = action;
        let mut clamped = false;
        for v in &mut a {
            if !v.is_finite() {
                *v = 0.0;
                clamped = true;
            } else if v.abs() > 1.0 {
                *v = v.clamp(-1.0, 1.0);
                clamped = true;
            }
        }
        if clamped {
            self.clamped_actions += 1;
        }

        let cfg = &self.config;
        let mut vel = [
            cfg.speed_factor * (self.state.velocity[0] + a[0] * cfg.accel_gain),
            cfg.speed_factor * (self.state.velocity[1] + a[1] * cfg.accel_gain),
        ];
        let speed = vel[0].hypot(vel[1]);
        if speed > cfg.max_speed {
            let k = cfg.max_speed / speed;
            vel = [vel[0] * k, vel[1] * k];
        }

        let half = cfg.collider_half_extent * self.layout.cell_size();
        let mut pos = self.state.position;
        for axis in 0..2 {
            let (next, blocked) = self.sweep_axis(pos, axis, vel[axis], half);
            pos[axis] = next;
            if blocked {
                vel[axis] = 0.0;
            }
        }

        self.state.position = pos;
        self.state.velocity = vel;
        self.state.step_count += 1;
        self.trajectory.push(pos);

        let reward = self.reward_at(pos);
        let outcome = if self.layout.distance_to_goal(pos) <= self.layout.goal_radius() {
            StepOutcome::Terminal
        } else if self.state.step_count >= cfg.max_episode_steps {
            StepOutcome::Truncated
        } else {
            StepOutcome::Running
        };
        self.done = outcome.is_done();
        Ok(StepResult {
            observation: self.observation(),
            reward,
            outcome,
        })
    }

    /// Moves along one axis, stopping short of the first wall cell the
    /// collider would enter. Returns the new coordinate and whether it was blocked.
    fn sweep_axis(&self, pos: [f64; 2], axis: usize, delta: f64, half: f64) -> (f64, bool) {
        let cs = self.layout.cell_size();
        let other = 1 - axis;
        let lo = ((pos[other] - half) / cs).floor() as i64;
        let hi = ((pos[other] + half) / cs).ceil() as i64 - 1;
        let wall_in_slab = |i: i64| {
            (lo..=hi).any(|j| {
                if axis == 0 {
                    self.layout.is_wall_world(i, j)
                } else {
                    self.layout.is_wall_world(j, i)
                }
            })
        };
        let target = pos[axis] + delta;
        if delta > 0.0 {
            let lead = pos[axis] + half;
            let mut i = (lead / cs).ceil() as i64;
            while (i as f64) * cs < target + half {
                if wall_in_slab(i) {
                    let stop = (i as f64) * cs - half - CONTACT_GAP;
                    return (stop.max(pos[axis]).min(target), true);
                }
                i += 1;
            }
        } else if delta < 0.0 {
            let trail = pos[axis] - half;
            let mut i = (trail / cs).floor() as i64 - 1;
            while ((i + 1) as f64) * cs > target - half {
                if wall_in_slab(i) {
                    let stop = ((i + 1) as f64) * cs + half + CONTACT_GAP;
                    return (stop.min(pos[axis]).max(target), true);
                }
                i -= 1;
            }
        }
        (target, false)
    }
}
