//! Spatial Markov game in which agents of both sides walk a grid, meet,
//! and hold matches by repeatedly expressing mutual interest.
//!
//! Agents are numbered globally: `0..n_side` is side 1 and
//! `n_side..2·n_side` is side 2. Each step resolves, in order: dissolution
//! of matches whose members stopped expressing interest in each other,
//! movement, formation of new matches between collocated agents with mutual
//! interest, rewards, and finally the interest flags seen in the next
//! observation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    /// Start cell of every agent, indexed globally.
    pub start_cells: Vec<usize>,
    pub steps_per_episode: usize,
    pub noise_sigma: f64,
    pub unmatched_penalty: f64,
}

impl GridConfig {
    pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
    pub const DEFAULT_UNMATCHED_PENALTY: f64 = -1.0;

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self, n_side: usize) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        if self.start_cells.len() != 2 * n_side {
            return Err(Error::Config(format!(
                "{} start cells for {} agents",
                self.start_cells.len(),
                2 * n_side
            )));
        }
        if let Some(c) = self.start_cells.iter().find(|&&c| c >= self.cells()) {
            return Err(Error::Config(format!("start cell {c} outside a {}x{} grid", self.rows, self.cols)));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::Config("steps_per_episode must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];
}

/// Discrete action index: `k < n_side` expresses interest in opposite-side
/// agent `k`; `n_side..n_side + 4` moves up, down, left, right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Interest(usize),
    Move(Move),
}

impl ActionId {
    pub fn count(n_side: usize) -> usize {
        n_side + 4
    }

    pub fn interest(k: usize) -> Self {
        ActionId(k)
    }

    pub fn movement(n_side: usize, m: Move) -> Self {
        ActionId(n_side + m as usize)
    }

    pub fn decode(self, n_side: usize) -> Result<Action> {
        match self.0 {
            k if k < n_side => Ok(Action::Interest(k)),
            k if k < n_side + 4 => Ok(Action::Move(Move::ALL[k - n_side])),
            k => Err(Error::Contract(format!("action {k} outside [0, {})", n_side + 4))),
        }
    }
}

/// Per-agent view: `[position one-hot | opposite agents in my cell |
/// collocated opposite agents that targeted me last step]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    bits: Vec<bool>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Observation { bits }
    }

    /// Dense 0/1 input vector.
    pub fn to_input<T: Scalar>(&self) -> Vec<T> {
        self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }

    pub fn write_input<T: Scalar>(&self, out: &mut [T]) {
        for (o, &b) in out.iter_mut().zip(&self.bits) {
            *o = if b { T::one() } else { T::zero() };
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub positions: Vec<usize>,
    /// Global id of the current partner.
    pub matched_with: Vec<Option<usize>>,
    /// Opposite-side local index this agent expressed interest in last step.
    pub last_interest: Vec<Option<usize>>,
    pub step: usize,
    reward_rng: ChaCha8Rng,
}

impl PartialEq for EnvState {
    fn eq(&self, other: &Self) -> bool {
        self.positions == other.positions
            && self.matched_with == other.matched_with
            && self.last_interest == other.last_interest
            && self.step == other.step
            && self.reward_rng == other.reward_rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub rewards: Vec<T>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone)]
pub struct GridEnv<T> {
    config: GridConfig,
    instance: Instance<T>,
    noise: Normal<f64>,
}

impl<T: Scalar> GridEnv<T> {
    pub fn new(config: GridConfig, instance: Instance<T>) -> Result<Self> {
        config.validate(instance.n_side)?;
        let noise = Normal::new(1.0, config.noise_sigma)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        Ok(GridEnv { config, instance, noise })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn instance(&self) -> &Instance<T> {
        &self.instance
    }

    pub fn n_side(&self) -> usize {
        self.instance.n_side
    }

    pub fn n_agents(&self) -> usize {
        2 * self.instance.n_side
    }

    pub fn observation_len(&self) -> usize {
        self.config.cells() + 2 * self.n_side()
    }

    pub fn action_count(&self) -> usize {
        ActionId::count(self.n_side())
    }

    /// Global id of `agent`'s opposite-side agent with local index `k`.
    #[inline]
    fn opposite(&self, agent: usize, k: usize) -> usize {
        let n = self.n_side();
        if agent < n {
            n + k
        } else {
            k
        }
    }

    #[inline]
    fn local(&self, agent: usize) -> usize {
        agent % self.n_side()
    }

    pub fn reset(&self, episode_seed: u64) -> (EnvState, Vec<Observation>) {
        let n = self.n_agents();
        let state = EnvState {
            positions: self.config.start_cells.clone(),
            matched_with: vec![None; n],
            last_interest: vec![None; n],
            step: 0,
            reward_rng: ChaCha8Rng::seed_from_u64(episode_seed),
        };
        let obs = self.observe_all(&state);
        (state, obs)
    }

    pub fn observe_all(&self, state: &EnvState) -> Vec<Observation> {
        (0..self.n_agents()).map(|a| self.encode_observation(state, a)).collect()
    }

    pub fn encode_observation(&self, state: &EnvState, agent: usize) -> Observation {
        let cells = self.config.cells();
        let n = self.n_side();
        let mut bits = vec![false; cells + 2 * n];
        let here = state.positions[agent];
        bits[here] = true;
        let me = self.local(agent);
        for k in 0..n {
            let other = self.opposite(agent, k);
            if state.positions[other] == here {
                bits[cells + k] = true;
                if state.last_interest[other] == Some(me) {
                    bits[cells + n + k] = true;
                }
            }
        }
        Observation { bits }
    }

    fn moved(&self, cell: usize, m: Move) -> usize {
        let (r, c) = (cell / self.config.cols, cell % self.config.cols);
        let (r, c) = match m {
            Move::Up => (r.saturating_sub(1), c),
            Move::Down => ((r + 1).min(self.config.rows - 1), c),
            Move::Left => (r, c.saturating_sub(1)),
            Move::Right => (r, (c + 1).min(self.config.cols - 1)),
        };
        r * self.config.cols + c
    }

    /// Advances the game by one joint action.
    pub fn step(&self, state: &mut EnvState, actions: &[ActionId]) -> Result<StepOutcome<T>> {
        let n_agents = self.n_agents();
        let n = self.n_side();
        if actions.len() != n_agents {
            return Err(Error::Contract(format!("{} actions for {n_agents} agents", actions.len())));
        }
        let decoded: Vec<Action> = actions.iter().map(|a| a.decode(n)).collect::<Result<_>>()?;

        // Dissolve.
        for a in 0..n_agents {
            if let Some(p) = state.matched_with[a] {
                let keeps = |x: usize, y: usize| decoded[x] == Action::Interest(self.local(y));
                if !(keeps(a, p) && keeps(p, a)) {
                    state.matched_with[a] = None;
                    state.matched_with[p] = None;
                }
            }
        }
        // Move.
        for (a, act) in decoded.iter().enumerate() {
            if let Action::Move(m) = *act {
                state.positions[a] = self.moved(state.positions[a], m);
            }
        }
        // Form.
        for i in 0..n {
            if state.matched_with[i].is_some() {
                continue;
            }
            if let Action::Interest(k) = decoded[i] {
                let j = n + k;
                if state.matched_with[j].is_none()
                    && state.positions[i] == state.positions[j]
                    && decoded[j] == Action::Interest(i)
                {
                    state.matched_with[i] = Some(j);
                    state.matched_with[j] = Some(i);
                }
            }
        }
        // Rewards.
        let penalty = T::of(self.config.unmatched_penalty);
        let mut rewards = Vec::with_capacity(n_agents);
        for a in 0..n_agents {
            let r = match state.matched_with[a] {
                None => penalty,
                Some(p) => {
                    let u = if a < n { self.instance.u1(a, p - n) } else { self.instance.u2(a - n, p) };
                    u * T::of(self.noise.sample(&mut state.reward_rng))
                }
            };
            rewards.push(r);
        }
        for (a, act) in decoded.iter().enumerate() {
            state.last_interest[a] = match *act {
                Action::Interest(k) => Some(k),
                Action::Move(_) => None,
            };
        }
        state.step += 1;
        Ok(StepOutcome { rewards, observations: self.observe_all(state) })
    }

    /// Checks matched pairs are mutual, cross-side and collocated.
    pub fn check_invariants(&self, state: &EnvState) -> Result<()> {
        let n = self.n_side();
        for (a, p) in state.matched_with.iter().enumerate() {
            if let Some(p) = *p {
                if state.matched_with[p] != Some(a) {
                    return Err(Error::Internal(format!("match {a}-{p} not mutual")));
                }
                if (a < n) == (p < n) {
                    return Err(Error::Internal(format!("match {a}-{p} within one side")));
                }
                if state.positions[a] != state.positions[p] {
                    return Err(Error::Internal(format!("matched agents {a}, {p} in different cells")));
                }
            }
        }
        if state.positions.iter().any(|&c| c >= self.config.cells()) {
            return Err(Error::Internal("agent off the grid".into()));
        }
        Ok(())
    }

    /// Current matches as side-1 to side-2 local indices.
    pub fn current_pairs(&self, state: &EnvState) -> Vec<Option<usize>> {
        let n = self.n_side();
        (0..n).map(|i| state.matched_with[i].map(|p| p - n)).collect()
    }
}

/// One line of the optional trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub positions: Vec<usize>,
    /// Side-2 local index per side-1 agent, -1 when unmatched.
    pub matches: Vec<i64>,
    pub rewards: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn capture<T: Scalar>(env: &GridEnv<T>, state: &EnvState, rewards: &[T]) -> Self {
        TrajectoryRecord {
            step: state.step,
            positions: state.positions.clone(),
            matches: env.current_pairs(state).iter().map(|p| p.map_or(-1, |j| j as i64)).collect(),
            rewards: rewards.iter().map(|r| r.as_f64()).collect(),
        }
    }

    /// Appends this record as one JSON line.
    pub fn write_line<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
