use std::collections::VecDeque;

use rand::Rng;

use crate::gridworld::{ActionId, Observation};

/// One SARSA experience: `(o, a, r, o', a')`, where `a'` is the action the
/// agent actually took next.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub obs: Observation,
    pub action: ActionId,
    pub reward: T,
    pub next_obs: Observation,
    pub next_action: ActionId,
    pub terminal: bool,
}

/// Transitions of the most recent episodes, evicted an episode at a time.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity_episodes: usize,
    episodes: VecDeque<Vec<Transition<T>>>,
    len: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub const DEFAULT_EPISODES: usize = 10;

    pub fn new(capacity_episodes: usize) -> Self {
        assert!(capacity_episodes > 0, "replay buffer needs room for one episode");
        ReplayBuffer { capacity_episodes, episodes: VecDeque::new(), len: 0 }
    }

    /// Opens a new episode, dropping the oldest one if the buffer is full.
    pub fn start_episode(&mut self) {
        if self.episodes.len() == self.capacity_episodes {
            if let Some(old) = self.episodes.pop_front() {
                self.len -= old.len();
            }
        }
        self.episodes.push_back(Vec::new());
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.episodes.is_empty() {
            self.start_episode();
        }
        self.episodes.back_mut().expect("open episode").push(t);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    fn get(&self, mut k: usize) -> &Transition<T> {
        for ep in &self.episodes {
            if k < ep.len() {
                return &ep[k];
            }
            k -= ep.len();
        }
        unreachable!("index below len")
    }

    /// `count` transitions drawn uniformly with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, count: usize, out: &mut Vec<&'a Transition<T>>) {
        if self.len == 0 {
            return;
        }
        for _ in 0..count {
            out.push(self.get(rng.random_range(0..self.len)));
        }
    }
}
