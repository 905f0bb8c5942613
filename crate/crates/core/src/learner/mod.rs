//! Independent on-policy SARSA learners.
//!
//! Each agent owns a small MLP over its observation, an Adam optimiser, a
//! replay buffer of its recent episodes and its own random stream. Nothing
//! is shared between agents.

mod adam;
mod mlp;
mod replay;
mod schedule;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use mlp::{Mlp, Workspace};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::ExplorationSchedule;

use crate::error::{Error, Result};
use crate::gridworld::{ActionId, Observation};
use crate::num::Scalar;

pub const CHECKPOINT_FORMAT: &str = "smlab-learner/1";

/// Epsilon-greedy choice; greedy ties go to the lowest index.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(q: &[T], epsilon: f64, rng: &mut R) -> ActionId {
    debug_assert!(!q.is_empty());
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return ActionId(rng.random_range(0..q.len()));
    }
    ActionId(argmax(q))
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(q: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = k;
        }
    }
    best
}

/// Buffers reused across updates.
#[derive(Debug, Clone)]
pub struct UpdateScratch<T> {
    ws: Workspace<T>,
    input: Vec<T>,
    d_out: Vec<T>,
    targets: Vec<T>,
    /// Gradient of the last [`loss_and_grad`] call.
    pub grad: Vec<T>,
}

impl<T: Scalar> UpdateScratch<T> {
    pub fn new(mlp: &Mlp<T>) -> Self {
        UpdateScratch {
            ws: mlp.workspace(),
            input: vec![T::zero(); mlp.input_len()],
            d_out: vec![T::zero(); mlp.output_len()],
            targets: Vec::new(),
            grad: vec![T::zero(); mlp.param_count()],
        }
    }
}

fn check_transition<T: Scalar>(mlp: &Mlp<T>, t: &Transition<T>) -> Result<()> {
    let n_out = mlp.output_len();
    if t.obs.len() != mlp.input_len() || t.next_obs.len() != mlp.input_len() {
        return Err(Error::Contract(format!(
            "observation of length {} for a network expecting {}",
            t.obs.len(),
            mlp.input_len()
        )));
    }
    if t.action.0 >= n_out || t.next_action.0 >= n_out {
        return Err(Error::Contract(format!("action outside 0..{n_out}")));
    }
    Ok(())
}

/// SARSA targets `r + gamma * Q(o', a')`, or `r` for terminal transitions.
pub fn td_targets<T: Scalar>(
    mlp: &Mlp<T>,
    batch: &[&Transition<T>],
    gamma: T,
    scratch: &mut UpdateScratch<T>,
    out: &mut Vec<T>,
) -> Result<()> {
    out.clear();
    for t in batch {
        check_transition(mlp, t)?;
        let y = if t.terminal {
            t.reward
        } else {
            t.next_obs.write_input(&mut scratch.input);
            let q = mlp.q_values_with(&scratch.input, &mut scratch.ws)?;
            t.reward + gamma * q[t.next_action.0]
        };
        out.push(y);
    }
    Ok(())
}

/// Mean squared error between `Q(o, a)` and fixed `targets`, with its
/// gradient left in `scratch.grad`.
pub fn loss_and_grad<T: Scalar>(
    mlp: &Mlp<T>,
    batch: &[&Transition<T>],
    targets: &[T],
    scratch: &mut UpdateScratch<T>,
) -> Result<T> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::Contract("empty batch or target count mismatch".into()));
    }
    scratch.grad.iter_mut().for_each(|g| *g = T::zero());
    let scale = T::one() / T::of(batch.len() as f64);
    let two = T::of(2.0);
    let mut loss = T::zero();
    for (t, &y) in batch.iter().zip(targets) {
        check_transition(mlp, t)?;
        t.obs.write_input(&mut scratch.input);
        let err = mlp.q_values_with(&scratch.input, &mut scratch.ws)?[t.action.0] - y;
        loss += err * err;
        scratch.d_out.iter_mut().for_each(|d| *d = T::zero());
        scratch.d_out[t.action.0] = two * err * scale;
        mlp.backprop(&scratch.d_out, &mut scratch.grad, &mut scratch.ws)?;
    }
    Ok(loss * scale)
}

/// One Adam step on the mean squared TD error of `batch`; returns the loss
/// measured before the step.
pub fn sarsa_update<T: Scalar>(
    mlp: &mut Mlp<T>,
    adam: &mut Adam<T>,
    batch: &[&Transition<T>],
    gamma: T,
    scratch: &mut UpdateScratch<T>,
) -> Result<T> {
    let mut targets = std::mem::take(&mut scratch.targets);
    td_targets(mlp, batch, gamma, scratch, &mut targets)?;
    let loss = loss_and_grad(mlp, batch, &targets, scratch);
    scratch.targets = targets;
    let loss = loss?;
    if !loss.is_finite() {
        return Err(Error::Training(format!("TD loss is {loss}")));
    }
    adam.apply(mlp.params_mut(), &scratch.grad);
    if !mlp.is_finite() {
        return Err(Error::Training("non-finite parameter after update".into()));
    }
    Ok(loss)
}

/// Hyperparameters shared by every agent of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_episodes: usize,
    /// Also take a separate step on each fresh transition.
    pub update_on_fresh: bool,
    pub epsilon0: f64,
    /// Decay constant; `None` tunes it to the episode budget.
    pub tau: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: vec![50, 25],
            learning_rate: 1e-4,
            gamma: 0.9,
            batch_size: 32,
            replay_episodes: ReplayBuffer::<f64>::DEFAULT_EPISODES,
            update_on_fresh: true,
            epsilon0: 1.0,
            tau: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 && !self.update_on_fresh {
            return bad("no updates configured");
        }
        if self.replay_episodes == 0 {
            return bad("replay must keep at least one episode");
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return bad("epsilon0 must lie in [0, 1]");
        }
        if matches!(self.tau, Some(t) if !(t > 0.0)) {
            return bad("tau must be positive");
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_len: usize, action_count: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_len);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(action_count);
        sizes
    }

    pub fn schedule(&self, episodes: usize) -> ExplorationSchedule {
        match self.tau {
            Some(tau) => ExplorationSchedule { eps0: self.epsilon0, tau, floor: ExplorationSchedule::DEFAULT_FLOOR },
            None => ExplorationSchedule::for_budget(self.epsilon0, episodes),
        }
    }
}

/// One agent's complete learning state.
#[derive(Debug, Clone)]
pub struct SarsaAgent<T> {
    mlp: Mlp<T>,
    adam: Adam<T>,
    buffer: ReplayBuffer<T>,
    schedule: ExplorationSchedule,
    gamma: T,
    batch_size: usize,
    update_on_fresh: bool,
    episode: usize,
    updates: u64,
    rng: ChaCha8Rng,
    scratch: UpdateScratch<T>,
    act_ws: Workspace<T>,
    act_input: Vec<T>,
}

impl<T: Scalar> SarsaAgent<T> {
    pub fn new(
        config: &LearnerConfig,
        input_len: usize,
        action_count: usize,
        schedule: ExplorationSchedule,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::glorot(&config.layer_sizes(input_len, action_count), &mut rng)?;
        let adam = Adam::new(mlp.param_count(), config.learning_rate);
        Ok(Self::assemble(mlp, adam, config, schedule, 0, 0, rng))
    }

    fn assemble(
        mlp: Mlp<T>,
        adam: Adam<T>,
        config: &LearnerConfig,
        schedule: ExplorationSchedule,
        episode: usize,
        updates: u64,
        rng: ChaCha8Rng,
    ) -> Self {
        SarsaAgent {
            scratch: UpdateScratch::new(&mlp),
            act_ws: mlp.workspace(),
            act_input: vec![T::zero(); mlp.input_len()],
            buffer: ReplayBuffer::new(config.replay_episodes),
            gamma: T::of(config.gamma),
            batch_size: config.batch_size,
            update_on_fresh: config.update_on_fresh,
            schedule,
            episode,
            updates,
            rng,
            mlp,
            adam,
        }
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn adam(&self) -> &Adam<T> {
        &self.adam
    }

    pub fn buffer(&self) -> &ReplayBuffer<T> {
        &self.buffer
    }

    pub fn schedule(&self) -> &ExplorationSchedule {
        &self.schedule
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Number of optimiser steps taken so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.epsilon(self.episode)
    }

    /// Moves the schedule to `episode` and opens a fresh replay episode.
    pub fn start_episode(&mut self, episode: usize) {
        self.episode = episode;
        self.buffer.start_episode();
    }

    pub fn q_values(&mut self, obs: &Observation) -> Result<&[T]> {
        if obs.len() != self.mlp.input_len() {
            return Err(Error::Contract(format!(
                "observation of length {} for a network expecting {}",
                obs.len(),
                self.mlp.input_len()
            )));
        }
        obs.write_input(&mut self.act_input);
        self.mlp.q_values_with(&self.act_input, &mut self.act_ws)
    }

    /// Epsilon-greedy action under the current schedule position.
    pub fn act(&mut self, obs: &Observation) -> Result<ActionId> {
        self.act_with(obs, self.epsilon())
    }

    pub fn act_with(&mut self, obs: &Observation, epsilon: f64) -> Result<ActionId> {
        obs.write_input(&mut self.act_input);
        if obs.len() != self.mlp.input_len() {
            return Err(Error::Contract("observation length mismatch".into()));
        }
        let q = self.mlp.q_values_with(&self.act_input, &mut self.act_ws)?;
        Ok(select_action(q, epsilon, &mut self.rng))
    }

    /// Stores `t`, then updates on it (if configured) and on one replay
    /// minibatch. Returns the mean loss over the updates made.
    pub fn observe(&mut self, t: Transition<T>) -> Result<T> {
        let mut total = T::zero();
        let mut count = 0u32;
        if self.update_on_fresh {
            total += sarsa_update(&mut self.mlp, &mut self.adam, &[&t], self.gamma, &mut self.scratch)?;
            self.updates += 1;
            count += 1;
        }
        self.buffer.push(t);
        if self.batch_size > 0 {
            let mut batch = Vec::with_capacity(self.batch_size);
            self.buffer.sample(&mut self.rng, self.batch_size, &mut batch);
            total += sarsa_update(&mut self.mlp, &mut self.adam, &batch, self.gamma, &mut self.scratch)?;
            self.updates += 1;
            count += 1;
        }
        Ok(total / T::of(count.max(1) as f64))
    }

    pub fn checkpoint(&self, config: &LearnerConfig) -> Checkpoint<T> {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: config.clone(),
            mlp: self.mlp.clone(),
            adam: self.adam.clone(),
            schedule: self.schedule,
            episode: self.episode,
            updates: self.updates,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        }
    }

    /// Rebuilds an agent from a checkpoint. The replay buffer starts empty.
    pub fn from_checkpoint(c: Checkpoint<T>) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", c.format)));
        }
        c.config.validate()?;
        if c.adam.first_moment().len() != c.mlp.param_count() || c.adam.second_moment().len() != c.mlp.param_count() {
            return Err(Error::Format("optimiser moments do not match the network".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(c.rng_seed);
        rng.set_stream(c.rng_stream);
        let pos = c.rng_word_pos.parse::<u128>().map_err(|e| Error::Format(format!("rng position: {e}")))?;
        rng.set_word_pos(pos);
        Ok(Self::assemble(c.mlp, c.adam, &c.config, c.schedule, c.episode, c.updates, rng))
    }
}

/// Serialized learner state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub config: LearnerConfig,
    pub mlp: Mlp<T>,
    pub adam: Adam<T>,
    pub schedule: ExplorationSchedule,
    pub episode: usize,
    pub updates: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    /// Decimal `u128`.
    pub rng_word_pos: String,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}
