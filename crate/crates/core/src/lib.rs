//! Decentralized two-sided stable matching laboratory.
//!
//! Independent SARSA learners look for partners on a grid under noisy
//! utilities; outcomes are scored for stability, instability severity and
//! fairness, and compared with centralized and decentralized baselines.

pub mod baselines;
pub mod error;
pub mod gridworld;
pub mod harness;
pub mod instance;
pub mod learner;
pub mod matching;
pub mod metrics;
pub mod num;

pub use error::{Error, Result};
pub use num::Scalar;

pub type InstanceF32 = instance::Instance<f32>;
pub type InstanceF64 = instance::Instance<f64>;
pub type GridEnvF32 = gridworld::GridEnv<f32>;
pub type GridEnvF64 = gridworld::GridEnv<f64>;
pub type MlpF32 = learner::Mlp<f32>;
pub type MlpF64 = learner::Mlp<f64>;
pub type SarsaAgentF32 = learner::SarsaAgent<f32>;
pub type SarsaAgentF64 = learner::SarsaAgent<f64>;
