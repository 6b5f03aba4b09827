//! Uniform replay storage plus the buffer diagnostics: the (Q, loss)
//! quadrant breakdown of stored data and the fraction of active units.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::td3::Td3Agent;

/// One environment transition. `terminal` is true only for true environment
/// terminals; truncations and early stops are stored as non-terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Row-batched transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for terminal transitions, 0.0 otherwise.
    pub terminals: Array1<f64>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items.first().ok_or(Error::Empty("batch"))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut batch = Batch {
            states: Array2::zeros((n, sd)),
            actions: Array2::zeros((n, ad)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, sd)),
            terminals: Array1::zeros(n),
        };
        for (row, t) in items.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::DimensionMismatch {
                    context: "batch transition",
                    expected: sd,
                    actual: t.state.len(),
                });
            }
            batch.states.row_mut(row).assign(&Array1::from(t.state.clone()));
            batch.actions.row_mut(row).assign(&Array1::from(t.action.clone()));
            batch.next_states.row_mut(row).assign(&Array1::from(t.next_state.clone()));
            batch.rewards[row] = t.reward;
            batch.terminals[row] = if t.terminal { 1.0 } else { 0.0 };
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity FIFO transition store with uniform sampling.
///
/// Transitions are kept in one flat row-major array; a row is
/// `[state, action, reward, next_state, terminal]`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    data: Vec<f64>,
    len: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            data: Vec::new(),
            len: 0,
            next: 0,
        })
    }

    fn stride(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Stores a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "replay state",
                expected: self.state_dim,
                actual: t.state.len(),
            });
        }
        if t.action.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                context: "replay action",
                expected: self.action_dim,
                actual: t.action.len(),
            });
        }
        let stride = self.stride();
        let mut row = Vec::with_capacity(stride);
        row.extend_from_slice(&t.state);
        row.extend_from_slice(&t.action);
        row.push(t.reward);
        row.extend_from_slice(&t.next_state);
        row.push(if t.terminal { 1.0 } else { 0.0 });
        if self.len < self.capacity {
            self.data.extend_from_slice(&row);
            self.len += 1;
        } else {
            self.data[self.next * stride..(self.next + 1) * stride].copy_from_slice(&row);
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Transition at storage slot `index` (not insertion order).
    pub fn get(&self, index: usize) -> Option<Transition> {
        if index >= self.len {
            return None;
        }
        let (sd, ad) = (self.state_dim, self.action_dim);
        let row = &self.data[index * self.stride()..(index + 1) * self.stride()];
        Some(Transition {
            state: row[..sd].to_vec(),
            action: row[sd..sd + ad].to_vec(),
            reward: row[sd + ad],
            next_state: row[sd + ad + 1..2 * sd + ad + 1].to_vec(),
            terminal: row[2 * sd + ad + 1] != 0.0,
        })
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.next };
        (0..self.len).map(move |k| self.get((start + k) % self.len).expect("in range"))
    }

    fn gather(&self, indices: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = indices.len();
        let stride = self.stride();
        let mut batch = Batch {
            states: Array2::zeros((n, sd)),
            actions: Array2::zeros((n, ad)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, sd)),
            terminals: Array1::zeros(n),
        };
        for (r, &i) in indices.iter().enumerate() {
            let row = &self.data[i * stride..(i + 1) * stride];
            for c in 0..sd {
                batch.states[[r, c]] = row[c];
                batch.next_states[[r, c]] = row[sd + ad + 1 + c];
            }
            for c in 0..ad {
                batch.actions[[r, c]] = row[sd + c];
            }
            batch.rewards[r] = row[sd + ad];
            batch.terminals[r] = row[2 * sd + ad + 1];
        }
        batch
    }

    /// I.i.d. uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.len < batch_size {
            return Err(Error::InsufficientData {
                size: self.len,
                requested: batch_size,
            });
        }
        let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len)).collect();
        Ok(self.gather(&indices))
    }

    /// The whole buffer as one batch, in storage order.
    pub fn as_batch(&self) -> Result<Batch> {
        if self.len == 0 {
            return Err(Error::Empty("replay buffer"));
        }
        let indices: Vec<usize> = (0..self.len).collect();
        Ok(self.gather(&indices))
    }
}

/// Per-transition (min-critic Q, |TD error|) pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSamples {
    pub q: Vec<f64>,
    pub loss: Vec<f64>,
}

impl ProbeSamples {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Means of both coordinates, used as quadrant split points.
    pub fn means(&self) -> Result<QuadrantSplit> {
        if self.is_empty() {
            return Err(Error::Empty("probe samples"));
        }
        let n = self.len() as f64;
        Ok(QuadrantSplit {
            q_split: self.q.iter().sum::<f64>() / n,
            loss_split: self.loss.iter().sum::<f64>() / n,
        })
    }
}

/// Evaluates every stored transition with the agent's probe.
pub fn probe_buffer(buffer: &ReplayBuffer, agent: &Td3Agent) -> Result<ProbeSamples> {
    let batch = buffer.as_batch()?;
    let (q, td) = agent.probe_batch(&batch)?;
    Ok(ProbeSamples {
        q: q.to_vec(),
        loss: td.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSplit {
    pub q_split: f64,
    pub loss_split: f64,
}

/// Fractions of data per (Q, loss) quadrant. A coordinate counts as high
/// when strictly above its split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantStats {
    pub low_q_low_loss: f64,
    pub low_q_high_loss: f64,
    pub high_q_low_loss: f64,
    pub high_q_high_loss: f64,
    pub split: QuadrantSplit,
}

impl QuadrantStats {
    pub fn fractions(&self) -> [f64; 4] {
        [
            self.low_q_low_loss,
            self.low_q_high_loss,
            self.high_q_low_loss,
            self.high_q_high_loss,
        ]
    }
}

pub fn classify(samples: &ProbeSamples, split: QuadrantSplit) -> Result<QuadrantStats> {
    if samples.is_empty() {
        return Err(Error::Empty("probe samples"));
    }
    let mut counts = [0usize; 4];
    for (&q, &l) in samples.q.iter().zip(&samples.loss) {
        let idx = 2 * usize::from(q > split.q_split) + usize::from(l > split.loss_split);
        counts[idx] += 1;
    }
    let n = samples.len() as f64;
    Ok(QuadrantStats {
        low_q_low_loss: counts[0] as f64 / n,
        low_q_high_loss: counts[1] as f64 / n,
        high_q_low_loss: counts[2] as f64 / n,
        high_q_high_loss: counts[3] as f64 / n,
        split,
    })
}

/// Quadrant breakdown of a buffer as seen by `agent`, against fixed splits.
pub fn quadrant_stats(buffer: &ReplayBuffer, agent: &Td3Agent, split: QuadrantSplit) -> Result<QuadrantStats> {
    classify(&probe_buffer(buffer, agent)?, split)
}

/// Fraction of strictly positive activations.
pub fn fau(activations: &[f64]) -> Result<f64> {
    if activations.is_empty() {
        return Err(Error::Empty("activation list"));
    }
    let active = activations.iter().filter(|&&a| a > 0.0).count();
    Ok(active as f64 / activations.len() as f64)
}

/// FAU over all hidden units of `net`, pooled across a probe batch.
pub fn network_fau(net: &Mlp, probe_inputs: ArrayView2<f64>) -> Result<f64> {
    let trace = net.forward_trace(probe_inputs)?;
    let all: Vec<f64> = trace.hidden().iter().flat_map(|h| h.iter().copied()).collect();
    fau(&all)
}
