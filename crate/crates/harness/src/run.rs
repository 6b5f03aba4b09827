//! The training loop: act, store, probe, fill statistics, resize, gate, update.

use std::collections::VecDeque;
use std::path::Path;

use anyhow::Context;
use least_core::controller::{NoiseSchedule, StopController};
use least_core::maze::{MazeEnv, StepOutcome};
use least_core::replay::{self, ProbeSamples, ReplayBuffer, Transition};
use least_core::td3::Td3Agent;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};

const STATE_DIM: usize = 4;
const ACTION_DIM: usize = 2;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy)]
enum Stream {
    Agent = 0,
    Reset = 1,
    Eval = 2,
    Probe = 3,
    Quadrant = 4,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub score_mean: f64,
    pub score_std: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub beta: f64,
    pub frac_lowq_lowloss: f64,
    pub frac_lowq_highloss: f64,
    pub frac_highq_lowloss: f64,
    pub frac_highq_highloss: f64,
    pub fau_actor: f64,
    pub fau_critic: f64,
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRow {
    pub episode: u64,
    pub global_step: u64,
    /// Environment steps taken in the episode.
    pub stop_step: usize,
    /// Whether the controller cut the episode short.
    pub forced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<CurveRow>,
    pub stops: Vec<StopRow>,
    /// Final positions of the most recent evaluation episodes, oldest first.
    pub final_positions: Vec<[f64; 2]>,
    /// Probe of the whole buffer at the snapshot step.
    pub snapshot: Option<ProbeSamples>,
    pub clamped_actions: u64,
}

impl RunRecord {
    pub fn forced_stops(&self) -> usize {
        self.stops.iter().filter(|s| s.forced).count()
    }
}

/// Fixed probe inputs for the FAU series: states spread over free space and
/// matching uniform actions for the critic.
struct FauProbe {
    states: Array2<f64>,
    critic_inputs: Array2<f64>,
}

impl FauProbe {
    fn new(env: &MazeEnv, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let layout = env.layout();
        let free: Vec<(usize, usize)> = (0..layout.rows())
            .flat_map(|r| (0..layout.cols()).map(move |c| (r, c)))
            .filter(|&(r, c)| !layout.is_wall(r, c))
            .collect();
        let vmax = env.config().max_speed;
        let mut states = Array2::zeros((n, STATE_DIM));
        let mut critic_inputs = Array2::zeros((n, STATE_DIM + ACTION_DIM));
        for i in 0..n {
            let center = layout.cell_center(free[rng.random_range(0..free.len())]);
            let half = 0.5 * layout.cell_size();
            let raw = [
                center[0] + rng.random_range(-half..half),
                center[1] + rng.random_range(-half..half),
                rng.random_range(-0.5..0.5) * vmax,
                rng.random_range(-0.5..0.5) * vmax,
            ];
            let obs = env.normalize_observation(&raw);
            for j in 0..STATE_DIM {
                states[[i, j]] = obs[j];
                critic_inputs[[i, j]] = obs[j];
            }
            for j in 0..ACTION_DIM {
                critic_inputs[[i, STATE_DIM + j]] = rng.random_range(-1.0..1.0);
            }
        }
        Self { states, critic_inputs }
    }

    fn measure(&self, agent: &Td3Agent) -> least_core::Result<(f64, f64)> {
        Ok((
            replay::network_fau(agent.actor(), self.states.view())?,
            replay::network_fau(agent.critics().0, self.critic_inputs.view())?,
        ))
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

struct Evaluation {
    scores: Vec<f64>,
    final_positions: Vec<[f64; 2]>,
}

/// Noise-free episodes on a separate environment. Touches neither the replay
/// buffer nor the controller.
fn evaluate(env: &mut MazeEnv, agent: &Td3Agent, episodes: usize, rng: &mut ChaCha8Rng) -> anyhow::Result<Evaluation> {
    let mut scores = Vec::with_capacity(episodes);
    let mut final_positions = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        while !env.is_done() {
            let a = agent.act(&env.normalize_observation(&obs))?;
            obs = env.step([a[0], a[1]])?.observation;
        }
        scores.push(env.layout().normalized_score(env.trajectory())?);
        final_positions.push(least_core::maze::final_position(env.trajectory())?);
    }
    Ok(Evaluation { scores, final_positions })
}

fn dump_diagnostics(dir: &Path, agent: &Td3Agent, controller: &StopController) {
    let _ = std::fs::create_dir_all(dir);
    let _ = agent.save_checkpoint(&dir.join("diagnostic_agent.json"));
    let _ = controller.dump_json(&dir.join("diagnostic_controller.json"));
}

/// Runs one seed. `diag_dir` receives a checkpoint and controller dump if
/// training hits a non-finite loss.
pub fn run_training(config: &ExperimentConfig, seed: u64, diag_dir: Option<&Path>) -> anyhow::Result<RunRecord> {
    config.validate()?;
    let least = config.mode == Mode::Least;
    let layout = config.maze_layout()?;
    let mut env = MazeEnv::new(layout.clone(), config.dynamics.clone())?;
    let mut eval_env = MazeEnv::new(layout, config.dynamics.clone())?;

    let mut rng = stream_rng(seed, Stream::Agent);
    let mut reset_rng = stream_rng(seed, Stream::Reset);
    let mut eval_rng = stream_rng(seed, Stream::Eval);
    let mut quadrant_rng = stream_rng(seed, Stream::Quadrant);
    let fau_probe = FauProbe::new(&env, config.fau_probe_size, &mut stream_rng(seed, Stream::Probe));

    let mut agent = Td3Agent::new(STATE_DIM, vec![-1.0; ACTION_DIM], vec![1.0; ACTION_DIM], config.agent.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.replay_capacity, STATE_DIM, ACTION_DIM)?;
    let mut controller = StopController::new(config.controller_config())?;
    let mut noise = NoiseSchedule::new(config.noise_config())?;
    let sigma_star = config.noise.sigma_star;

    let mut record = RunRecord::default();
    let mut recent_finals: VecDeque<[f64; 2]> = VecDeque::with_capacity(config.final_position_episodes);
    let snapshot_step = config.snapshot_step();

    let mut obs = { let raw = env.reset(&mut reset_rng); env.normalize_observation(&raw) };
    let mut ep_step = 0usize;
    let mut episode = 0u64;

    for t in 1..=config.total_steps {
        let action: Vec<f64> = if t <= config.warmup_steps {
            (0..ACTION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            let sigma = if least { noise.sigma() } else { sigma_star };
            agent.select_action(&obs, sigma, &mut rng)?
        };
        let result = env.step([action[0], action[1]])?;
        let next = env.normalize_observation(&result.observation);
        let terminal = result.outcome == StepOutcome::Terminal;
        buffer.push(&Transition {
            state: obs.to_vec(),
            action: action.clone(),
            reward: result.reward,
            next_state: next.to_vec(),
            terminal,
        })?;

        let mut forced = false;
        if least {
            let probe = agent.probe(&obs, &action, result.reward, &next, terminal)?;
            controller.record_step(ep_step, probe)?;
            controller.maybe_resize(t);
            forced = !result.outcome.is_done() && controller.should_stop(t, ep_step, probe);
        }

        if t > config.warmup_steps && buffer.len() >= config.batch_size {
            let batch = buffer.sample(config.batch_size, &mut rng)?;
            if let Err(e) = agent.train_step(&batch, &mut rng) {
                if let Some(dir) = diag_dir {
                    dump_diagnostics(dir, &agent, &controller);
                }
                return Err(e).with_context(|| format!("update failed at step {t} (seed {seed})"));
            }
        }

        ep_step += 1;
        if result.outcome.is_done() || forced {
            record.stops.push(StopRow {
                episode,
                global_step: t,
                stop_step: ep_step,
                forced,
            });
            if least {
                controller.close_episode();
                noise.record_episode_end(ep_step, forced);
            }
            obs = { let raw = env.reset(&mut reset_rng); env.normalize_observation(&raw) };
            ep_step = 0;
            episode += 1;
        } else {
            obs = next;
        }

        if t == snapshot_step {
            record.snapshot = Some(replay::probe_buffer(&buffer, &agent)?);
        }

        if t % config.eval_interval == 0 || t == config.total_steps {
            let eval = evaluate(&mut eval_env, &agent, config.eval_episodes, &mut eval_rng)?;
            for p in eval.final_positions {
                if recent_finals.len() == config.final_position_episodes {
                    recent_finals.pop_front();
                }
                if config.final_position_episodes > 0 {
                    recent_finals.push_back(p);
                }
            }
            let idx: Vec<usize> = (0..config.quadrant_sample_size)
                .map(|_| quadrant_rng.random_range(0..buffer.len()))
                .collect();
            let sample: Vec<Transition> = idx.iter().filter_map(|&i| buffer.get(i)).collect();
            let batch = least_core::replay::Batch::from_transitions(&sample)?;
            let (q, td) = agent.probe_batch(&batch)?;
            let samples = ProbeSamples {
                q: q.to_vec(),
                loss: td.to_vec(),
            };
            let quad = replay::classify(&samples, samples.means()?)?;
            let (fau_actor, fau_critic) = fau_probe.measure(&agent)?;
            record.rows.push(CurveRow {
                step: t,
                score_mean: eval.scores.iter().sum::<f64>() / eval.scores.len() as f64,
                score_std: population_std(&eval.scores),
                k: if least { controller.k() } else { config.stop.k },
                sigma: if least { noise.sigma() } else { sigma_star },
                beta: if least { noise.beta() } else { 0.0 },
                frac_lowq_lowloss: quad.low_q_low_loss,
                frac_lowq_highloss: quad.low_q_high_loss,
                frac_highq_lowloss: quad.high_q_low_loss,
                frac_highq_highloss: quad.high_q_high_loss,
                fau_actor,
                fau_critic,
            });
        }
    }
    record.final_positions = recent_finals.into_iter().collect();
    record.clamped_actions = env.clamped_actions();
    Ok(record)
}
