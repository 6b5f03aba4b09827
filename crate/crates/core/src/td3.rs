//! TD3 backbone: deterministic actor, clipped double critics, target networks.
//!
//! Besides the usual updates, the agent exposes [`Td3Agent::probe`], which
//! evaluates a fresh transition without touching any parameters. The stop
//! controller consumes its `(q_hat, |TD error|)` output.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, Gradients, Mlp, OutputActivation};
use crate::replay::{Batch, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub polyak_rate: f64,
    pub policy_noise_std: f64,
    pub policy_noise_clip: f64,
    pub policy_delay: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            discount: 0.99,
            polyak_rate: 0.005,
            policy_noise_std: 0.2,
            policy_noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.polyak_rate > 0.0 && self.polyak_rate <= 1.0) {
            return bad("polyak rate must lie in (0, 1]");
        }
        if self.policy_noise_std < 0.0 || self.policy_noise_clip < 0.0 {
            return bad("policy smoothing noise must be nonnegative");
        }
        if self.policy_delay == 0 {
            return bad("policy delay must be positive");
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Controller inputs for one fresh transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepProbe {
    /// `min(Q1(s, a), Q2(s, a))`.
    pub q_hat: f64,
    /// `|y − q_hat|` with a smoothing-free bootstrap target.
    pub td_error_mag: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Agent {
    config: Td3Config,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    actor: Mlp,
    critic1: Mlp,
    critic2: Mlp,
    target_actor: Mlp,
    target_critic1: Mlp,
    target_critic2: Mlp,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    critic_updates: u64,
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

/// Mean-squared error of a critic against fixed targets, with its gradient.
pub fn critic_loss_and_grads(
    critic: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: &Array1<f64>,
) -> Result<(f64, Gradients)> {
    let input = concatenate(Axis(1), &[states, actions]).map_err(|_| Error::DimensionMismatch {
        context: "critic batch rows",
        expected: states.nrows(),
        actual: actions.nrows(),
    })?;
    let trace = critic.forward_trace(input.view())?;
    let q = trace.output().column(0);
    let n = targets.len() as f64;
    let diff = &q - targets;
    let loss = diff.mapv(|d| d * d).sum() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss"));
    }
    let upstream = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&trace, &upstream)?;
    Ok((loss, grads))
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        config: Td3Config,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if action_low.len() != action_high.len() || action_low.is_empty() {
            return Err(Error::InvalidConfig("action bounds must be nonempty and equal length".into()));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidConfig("action low must be below action high".into()));
        }
        let action_dim = action_low.len();
        let actor_dims = layer_dims(state_dim, &config.hidden, action_dim);
        let critic_dims = layer_dims(state_dim + action_dim, &config.hidden, 1);
        let actor = Mlp::new(&actor_dims, OutputActivation::Tanh, rng)?;
        let critic1 = Mlp::new(&critic_dims, OutputActivation::Identity, rng)?;
        let critic2 = Mlp::new(&critic_dims, OutputActivation::Identity, rng)?;
        Ok(Self {
            state_dim,
            action_dim,
            action_low,
            action_high,
            target_actor: actor.clone(),
            target_critic1: critic1.clone(),
            target_critic2: critic2.clone(),
            actor_opt: AdamState::new(&actor_dims, config.actor_lr),
            critic1_opt: AdamState::new(&critic_dims, config.critic_lr),
            critic2_opt: AdamState::new(&critic_dims, config.critic_lr),
            actor,
            critic1,
            critic2,
            critic_updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &Td3Config {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.critic1, &self.critic2)
    }

    pub fn targets(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.target_actor, &self.target_critic1, &self.target_critic2)
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    /// Mutable access to live critics, for tests and checkpoint surgery.
    pub fn critics_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.critic1, &mut self.critic2)
    }

    pub fn targets_mut(&mut self) -> (&mut Mlp, &mut Mlp, &mut Mlp) {
        (&mut self.target_actor, &mut self.target_critic1, &mut self.target_critic2)
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    fn half_range(&self) -> Array1<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    fn mid_point(&self) -> Array1<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect()
    }

    /// Maps squashed actor outputs in `[-1, 1]` onto the action box.
    fn scale_actions(&self, squashed: &Array2<f64>) -> Array2<f64> {
        squashed * &self.half_range() + &self.mid_point()
    }

    fn clip_actions(&self, actions: &mut Array2<f64>) {
        for mut row in actions.rows_mut() {
            for (j, a) in row.iter_mut().enumerate() {
                *a = a.clamp(self.action_low[j], self.action_high[j]);
            }
        }
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "agent state",
                expected: self.state_dim,
                actual: state.len(),
            });
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("agent state"));
        }
        Ok(())
    }

    /// Deterministic policy action.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let y = self.actor.forward_batch(x)?;
        Ok(self.scale_actions(&y).into_raw_vec_and_offset().0)
    }

    /// Policy action plus i.i.d. `N(0, sigma²)` noise per component, clipped to
    /// the action box. No noise is drawn when `sigma == 0`.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidConfig("exploration sigma must be nonnegative".into()));
        }
        let mut action = self.act(state)?;
        for (j, a) in action.iter_mut().enumerate() {
            if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                *a += sigma * z;
            }
            *a = a.clamp(self.action_low[j], self.action_high[j]);
        }
        Ok(action)
    }

    /// Live critic values for a batch of state-action pairs.
    pub fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let input = concatenate(Axis(1), &[states, actions]).map_err(|_| Error::DimensionMismatch {
            context: "critic batch rows",
            expected: states.nrows(),
            actual: actions.nrows(),
        })?;
        let q1 = self.critic1.forward_batch(input.view())?.column(0).to_owned();
        let q2 = self.critic2.forward_batch(input.view())?.column(0).to_owned();
        Ok((q1, q2))
    }

    fn target_policy_actions(&self, next_states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.scale_actions(&self.target_actor.forward_batch(next_states)?))
    }

    fn targets_for(&self, batch: &Batch, next_actions: &Array2<f64>) -> Result<Array1<f64>> {
        let input = concatenate(Axis(1), &[batch.next_states.view(), next_actions.view()]).map_err(|_| {
            Error::DimensionMismatch {
                context: "target critic batch",
                expected: batch.len(),
                actual: next_actions.nrows(),
            }
        })?;
        let q1 = self.target_critic1.forward_batch(input.view())?;
        let q2 = self.target_critic2.forward_batch(input.view())?;
        let gamma = self.config.discount;
        Ok(ndarray::Zip::from(&batch.rewards)
            .and(&batch.terminals)
            .and(q1.column(0))
            .and(q2.column(0))
            .map_collect(|&r, &d, &a, &b| r + gamma * (1.0 - d) * a.min(b)))
    }

    /// Training targets `r + γ (1 − terminal) min_j Q̄_j(s', ã)` where `ã` is
    /// the target-policy action plus clipped smoothing noise.
    pub fn bootstrap_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array1<f64>> {
        let mut next_actions = self.target_policy_actions(batch.next_states.view())?;
        let half = self.half_range();
        let (std, clip) = (self.config.policy_noise_std, self.config.policy_noise_clip);
        for mut row in next_actions.rows_mut() {
            for (j, a) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *a += (std * z).clamp(-clip, clip) * half[j];
            }
        }
        self.clip_actions(&mut next_actions);
        self.targets_for(batch, &next_actions)
    }

    /// Noise-free targets, as used by the probe.
    pub fn probe_targets(&self, batch: &Batch) -> Result<Array1<f64>> {
        let next_actions = self.target_policy_actions(batch.next_states.view())?;
        self.targets_for(batch, &next_actions)
    }

    /// `(q_hat, |TD error|)` for every row of a batch, without smoothing noise.
    pub fn probe_batch(&self, batch: &Batch) -> Result<(Array1<f64>, Array1<f64>)> {
        let y = self.probe_targets(batch)?;
        let (q1, q2) = self.q_values(batch.states.view(), batch.actions.view())?;
        let q_hat = ndarray::Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b));
        let td = ndarray::Zip::from(&y).and(&q_hat).map_collect(|&y, &q| (y - q).abs());
        Ok((q_hat, td))
    }

    /// Controller inputs for one fresh transition. Never mutates the agent.
    pub fn probe(&self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], terminal: bool) -> Result<StepProbe> {
        self.check_state(state)?;
        self.check_state(next_state)?;
        if action.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                context: "probe action",
                expected: self.action_dim,
                actual: action.len(),
            });
        }
        let t = Transition {
            state: state.to_vec(),
            action: action.to_vec(),
            reward,
            next_state: next_state.to_vec(),
            terminal,
        };
        let batch = Batch::from_transitions([&t])?;
        let (q, td) = self.probe_batch(&batch)?;
        Ok(StepProbe {
            q_hat: q[0],
            td_error_mag: td[0],
        })
    }

    /// One Adam step on each critic's MSE to shared smoothed targets.
    pub fn update_critics<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Empty("critic batch"));
        }
        let y = self.bootstrap_targets(batch, rng)?;
        let (l1, g1) = critic_loss_and_grads(&self.critic1, batch.states.view(), batch.actions.view(), &y)?;
        let (l2, g2) = critic_loss_and_grads(&self.critic2, batch.states.view(), batch.actions.view(), &y)?;
        self.critic1_opt.step(&mut self.critic1, &g1)?;
        self.critic2_opt.step(&mut self.critic2, &g2)?;
        self.critic_updates += 1;
        Ok((l1, l2))
    }

    /// `−mean Q1(s, π(s))` and its gradient with respect to the actor.
    pub fn actor_loss_and_grads(&self, states: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let actor_trace = self.actor.forward_trace(states)?;
        let actions = self.scale_actions(actor_trace.output());
        let input = concatenate(Axis(1), &[states, actions.view()]).expect("same row count");
        let critic_trace = self.critic1.forward_trace(input.view())?;
        let n = states.nrows() as f64;
        let loss = -critic_trace.output().sum() / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let upstream = Array2::from_elem((states.nrows(), 1), -1.0 / n);
        let (_, d_input) = self.critic1.backward(&critic_trace, &upstream)?;
        let d_actions = d_input.slice(s![.., self.state_dim..]).to_owned() * &self.half_range();
        let (grads, _) = self.actor.backward(&actor_trace, &d_actions)?;
        Ok((loss, grads))
    }

    /// Deterministic policy gradient step; critics stay frozen.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("actor batch"));
        }
        let (loss, grads) = self.actor_loss_and_grads(batch.states.view())?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(loss)
    }

    /// `target ← ρ · live + (1 − ρ) · target` for all three target networks.
    pub fn polyak_update(&mut self) {
        let rate = self.config.polyak_rate;
        self.target_actor.soft_update_from(&self.actor, rate);
        self.target_critic1.soft_update_from(&self.critic1, rate);
        self.target_critic2.soft_update_from(&self.critic2, rate);
    }

    /// Critic update, then actor and target updates every `policy_delay` calls.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let (critic1_loss, critic2_loss) = self.update_critics(batch, rng)?;
        let mut stats = UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss: None,
        };
        if self.critic_updates % self.config.policy_delay == 0 {
            stats.actor_loss = Some(self.update_actor(batch)?);
            self.polyak_update();
        }
        Ok(stats)
    }

    pub fn save_checkpoint(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load_checkpoint(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}
