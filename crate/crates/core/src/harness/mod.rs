//! Experiment runner: generates instances, trains learners or runs a
//! baseline for every (instance, repeat) cell, reads off the final
//! matching, scores it and aggregates the results.

mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{aggregate, emit_report, Aggregates, MeanStd, OutcomeReport, RunRecord, CSV_COLUMNS, REPORT_FORMAT};

use crate::baselines::{run_baseline, Baseline};
use crate::error::{Error, Result};
use crate::gridworld::{ActionId, GridConfig, GridEnv, Observation, TrajectoryRecord};
use crate::instance::{generate_instance, Instance, PrefType, Variant};
use crate::learner::{LearnerConfig, SarsaAgent, Transition};
use crate::matching::{enumerate_stable_matchings, Matching, ENUMERATION_LIMIT};
use crate::metrics::score_with;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Marl,
    Bls,
    Ha,
    Dcf,
}

impl Algorithm {
    pub fn baseline(self) -> Option<Baseline> {
        match self {
            Algorithm::Marl => None,
            Algorithm::Bls => Some(Baseline::Bls),
            Algorithm::Ha => Some(Baseline::Ha),
            Algorithm::Dcf => Some(Baseline::Dcf),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Marl => "marl",
            Algorithm::Bls => "bls",
            Algorithm::Ha => "ha",
            Algorithm::Dcf => "dcf",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "marl" => Ok(Algorithm::Marl),
            "bls" => Ok(Algorithm::Bls),
            "ha" => Ok(Algorithm::Ha),
            "dcf" | "d-cf" => Ok(Algorithm::Dcf),
            _ => Err(Error::Config(format!("unknown algorithm {s:?} (expected marl, bls, ha or dcf)"))),
        }
    }
}

/// Floating point type used for utilities, rewards and networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub pref_type: PrefType,
    pub n_side: usize,
    pub instance_seeds: Vec<u64>,
    pub rows: usize,
    pub cols: usize,
    /// Seed of the per-instance start-cell draw.
    pub start_seed: u64,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub noise_sigma: f64,
    pub unmatched_penalty: f64,
    pub learner: LearnerConfig,
    pub repeats: usize,
    /// Outcome persistence window in steps.
    pub window: usize,
    /// Root of every per-run seed.
    pub seed: u64,
    pub workers: usize,
    /// Dump the evaluation episode of every run as JSON lines.
    pub trajectory: bool,
    /// Save every trained learner.
    pub checkpoints: bool,
    pub precision: Precision,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variant: Variant::SM,
            pref_type: PrefType::Symmetric,
            n_side: 4,
            instance_seeds: (0..10).collect(),
            rows: 3,
            cols: 3,
            start_seed: 0,
            algorithm: Algorithm::Marl,
            episodes: 20_000,
            steps_per_episode: 300,
            noise_sigma: GridConfig::DEFAULT_NOISE_SIGMA,
            unmatched_penalty: GridConfig::DEFAULT_UNMATCHED_PENALTY,
            learner: LearnerConfig::default(),
            repeats: 5,
            window: Self::DEFAULT_WINDOW,
            seed: 0,
            workers: 1,
            trajectory: false,
            checkpoints: false,
            precision: Precision::F64,
        }
    }
}

impl ExperimentConfig {
    pub const DEFAULT_WINDOW: usize = 50;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_side == 0 {
            return bad("n_side must be positive".into());
        }
        if self.instance_seeds.is_empty() {
            return bad("at least one instance seed is required".into());
        }
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("a {}x{} grid has no cells", self.rows, self.cols));
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if self.algorithm == Algorithm::Marl {
            if self.episodes == 0 || self.steps_per_episode == 0 {
                return bad("training budget must be positive".into());
            }
            if self.window == 0 {
                return bad("outcome window must be positive".into());
            }
            self.learner.validate()?;
        }
        Ok(())
    }

    /// Environment layout for one instance: start cells are a function of
    /// `start_seed` and the instance seed only.
    pub fn grid_for(&self, instance_seed: u64) -> GridConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.start_seed, &[0x5747, instance_seed]));
        let cells = self.rows * self.cols;
        GridConfig {
            rows: self.rows,
            cols: self.cols,
            start_cells: (0..2 * self.n_side).map(|_| rng.random_range(0..cells)).collect(),
            steps_per_episode: self.steps_per_episode,
            noise_sigma: self.noise_sigma,
            unmatched_penalty: self.unmatched_penalty,
        }
    }

    pub fn run_seed(&self, instance_seed: u64, repeat: usize) -> u64 {
        derive_seed(self.seed, &[instance_seed, repeat as u64])
    }
}

/// Mixes `tags` into `base` with the SplitMix64 finaliser.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc.rotate_left(23) ^ mix(t)))
}

/// Something that picks a deterministic action from an observation.
pub trait Policy {
    fn greedy_action(&mut self, obs: &Observation) -> Result<ActionId>;
}

impl<T: Scalar> Policy for SarsaAgent<T> {
    fn greedy_action(&mut self, obs: &Observation) -> Result<ActionId> {
        self.act_with(obs, 0.0)
    }
}

/// Trained learners of one run, ordered by global agent id.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub agents: Vec<SarsaAgent<T>>,
    /// Mean per-step reward, indexed `[episode][agent]`.
    pub curve: Vec<Vec<f64>>,
}

impl<T> Trained<T> {
    /// Per-episode reward averaged over agents.
    pub fn mean_curve(&self) -> Vec<f64> {
        self.curve.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect()
    }
}

/// Trains one independent SARSA learner per agent.
pub fn train_marl<T: Scalar>(config: &ExperimentConfig, env: &GridEnv<T>, run_seed: u64) -> Result<Trained<T>> {
    let n = env.n_agents();
    let steps = env.config().steps_per_episode;
    let schedule = config.learner.schedule(config.episodes);
    let mut agents = (0..n)
        .map(|a| {
            SarsaAgent::new(
                &config.learner,
                env.observation_len(),
                env.action_count(),
                schedule,
                derive_seed(run_seed, &[1, a as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curve = Vec::with_capacity(config.episodes);
    let mut actions = vec![ActionId(0); n];
    let mut next_actions = vec![ActionId(0); n];
    for episode in 0..config.episodes {
        for agent in &mut agents {
            agent.start_episode(episode);
        }
        let (mut state, mut obs) = env.reset(derive_seed(run_seed, &[2, episode as u64]));
        for (a, agent) in agents.iter_mut().enumerate() {
            actions[a] = agent.act(&obs[a])?;
        }
        let mut totals = vec![0.0f64; n];
        for s in 0..steps {
            let out = env.step(&mut state, &actions)?;
            let terminal = s + 1 == steps;
            for (a, agent) in agents.iter_mut().enumerate() {
                // No successor action exists at the episode end; the target ignores it.
                next_actions[a] = if terminal { actions[a] } else { agent.act(&out.observations[a])? };
                let t = Transition {
                    obs: std::mem::replace(&mut obs[a], out.observations[a].clone()),
                    action: actions[a],
                    reward: out.rewards[a],
                    next_obs: out.observations[a].clone(),
                    next_action: next_actions[a],
                    terminal,
                };
                agent.observe(t).map_err(|e| match e {
                    Error::Training(m) => Error::Training(format!("agent {a}, episode {episode}, step {s}: {m}")),
                    other => other,
                })?;
                totals[a] += out.rewards[a].as_f64();
            }
            std::mem::swap(&mut actions, &mut next_actions);
        }
        curve.push(totals.iter().map(|t| t / steps as f64).collect());
    }
    Ok(Trained { agents, curve })
}

/// Plays one greedy episode and keeps the pairs that stay matched through
/// each of the final `window` steps.
pub fn extract_outcome<T: Scalar, P: Policy>(
    env: &GridEnv<T>,
    policies: &mut [P],
    episode_seed: u64,
    window: usize,
    mut trajectory: Option<&mut Vec<TrajectoryRecord>>,
) -> Result<Matching> {
    if policies.len() != env.n_agents() {
        return Err(Error::Contract(format!("{} policies for {} agents", policies.len(), env.n_agents())));
    }
    let steps = env.config().steps_per_episode;
    let window = window.clamp(1, steps);
    let (mut state, mut obs) = env.reset(episode_seed);
    let mut persistent: Option<Vec<Option<usize>>> = None;
    let mut actions = vec![ActionId(0); policies.len()];
    for s in 0..steps {
        for (a, p) in policies.iter_mut().enumerate() {
            actions[a] = p.greedy_action(&obs[a])?;
        }
        let out = env.step(&mut state, &actions)?;
        if let Some(rec) = trajectory.as_deref_mut() {
            rec.push(TrajectoryRecord::capture(env, &state, &out.rewards));
        }
        if s + window >= steps {
            let now = env.current_pairs(&state);
            persistent = Some(match persistent {
                None => now,
                Some(prev) => prev.iter().zip(&now).map(|(p, q)| if p == q { *p } else { None }).collect(),
            });
        }
        obs = out.observations;
    }
    Matching::from_partner_of_1(persistent.unwrap_or_else(|| vec![None; env.n_side()]))
}

/// Outcome of one (instance, repeat) cell before scoring.
struct RunOutput {
    matching: Matching,
    curve: Vec<f64>,
    episodes: usize,
}

fn run_marl<T: Scalar>(
    config: &ExperimentConfig,
    instance: &Instance<T>,
    run_seed: u64,
    tag: &str,
    artifacts: Option<&Path>,
) -> Result<RunOutput> {
    let env = GridEnv::new(config.grid_for(instance.seed), instance.clone())?;
    let mut trained = train_marl(config, &env, run_seed)?;
    let mut records = Vec::new();
    let matching = extract_outcome(
        &env,
        &mut trained.agents,
        derive_seed(run_seed, &[3]),
        config.window,
        config.trajectory.then_some(&mut records),
    )?;
    if let Some(dir) = artifacts {
        if config.trajectory {
            let mut out = BufWriter::new(File::create(dir.join(format!("trajectory_{tag}.jsonl")))?);
            for r in &records {
                r.write_line(&mut out)?;
            }
        }
        if config.checkpoints {
            for (a, agent) in trained.agents.iter().enumerate() {
                let file = BufWriter::new(File::create(dir.join(format!("checkpoint_{tag}_agent{a}.json")))?);
                agent.checkpoint(&config.learner).write_json(file)?;
            }
        }
    }
    Ok(RunOutput { matching, curve: trained.mean_curve(), episodes: config.episodes })
}

/// Runs every (instance, repeat) cell of `config`. Failed runs are kept as
/// records carrying their error. Per-run trajectories and checkpoints go
/// to `artifacts` when requested by the config.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig, artifacts: Option<&Path>) -> Result<OutcomeReport> {
    config.validate()?;
    let started = Instant::now();
    if let Some(dir) = artifacts {
        if config.trajectory || config.checkpoints {
            fs::create_dir_all(dir)?;
        }
    }
    let instances: Vec<Result<(Instance<T>, Option<Vec<Matching>>)>> = config
        .instance_seeds
        .iter()
        .map(|&seed| {
            let x = generate_instance::<T>(config.variant, config.pref_type, config.n_side, seed)?;
            let stable = if x.n_side <= ENUMERATION_LIMIT { Some(enumerate_stable_matchings(&x)?) } else { None };
            Ok((x, stable))
        })
        .collect();
    let jobs: Vec<(usize, usize)> =
        (0..instances.len()).flat_map(|k| (0..config.repeats).map(move |r| (k, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, repeat)| {
                let instance_seed = config.instance_seeds[k];
                let run_seed = config.run_seed(instance_seed, repeat);
                let t0 = Instant::now();
                let tag = format!("i{instance_seed}_r{repeat}");
                let result = instances[k].as_ref().map_err(|e| Error::InvalidInstance(e.to_string())).and_then(|(x, stable)| {
                    let out = match config.algorithm.baseline() {
                        None => run_marl(config, x, run_seed, &tag, artifacts)?,
                        Some(b) => RunOutput {
                            matching: run_baseline(b, x, run_seed)?.matching,
                            curve: Vec::new(),
                            episodes: 0,
                        },
                    };
                    let metrics = score_with(x, &out.matching, stable.as_deref())?;
                    Ok((out, metrics))
                });
                let wall_seconds = t0.elapsed().as_secs_f64();
                match result {
                    Ok((out, metrics)) => RunRecord {
                        instance_seed,
                        repeat,
                        run_seed,
                        error: None,
                        matching: Some(out.matching),
                        metrics: Some(metrics),
                        episodes: out.episodes,
                        training_curve: out.curve,
                        wall_seconds,
                    },
                    Err(e) => RunRecord {
                        instance_seed,
                        repeat,
                        run_seed,
                        error: Some(e.to_string()),
                        matching: None,
                        metrics: None,
                        episodes: 0,
                        training_curve: Vec::new(),
                        wall_seconds,
                    },
                }
            })
            .collect()
    });
    let aggregates = aggregate(&runs);
    Ok(OutcomeReport {
        format: REPORT_FORMAT.to_string(),
        config: config.clone(),
        total_episodes: runs.iter().map(|r| r.episodes as u64).sum(),
        runs,
        aggregates,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// [`run_experiment`] at the precision named in the config.
pub fn run_configured(config: &ExperimentConfig, artifacts: Option<&Path>) -> Result<OutcomeReport> {
    match config.precision {
        Precision::F32 => run_experiment::<f32>(config, artifacts),
        Precision::F64 => run_experiment::<f64>(config, artifacts),
    }
}
