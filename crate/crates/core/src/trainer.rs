//! Episodic policy-gradient training: Monte Carlo rollouts, discounted
//! returns, a per-timestep baseline averaged over the episodes of the same
//! jobset, and one parameter update per iteration.
//!
//! All randomness is derived statelessly from the master seed, the iteration
//! number, and the episode's position in the batch, so parallel rollouts and
//! checkpoint resume reproduce a sequential uninterrupted run exactly.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::env::{Action, Env, EnvConfig, EnvError, Observation};
use crate::policy::{
    self, argmax_action, forward, sample_action, GradAccum, PolicyError, PolicyParams,
};
use crate::rngstream::{self, StreamKind};
use crate::workload::JobSet;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_iterations: usize,
    pub jobsets_per_iteration: usize,
    pub episodes_per_jobset: usize,
    /// Return discount; 1 makes an episode's return the negative slowdown sum.
    pub discount: f64,
    /// Cap on agent decisions per rollout (the environment's clock cap bounds
    /// timesteps independently).
    pub max_episode_length: usize,
    /// Checkpoint cadence in iterations.
    pub eval_every: usize,
    pub seed: u64,
    /// Run the rollouts of an iteration on the rayon pool. Results are
    /// identical to the sequential path.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_iterations: 100,
            jobsets_per_iteration: 10,
            episodes_per_jobset: 20,
            discount: 1.0,
            max_episode_length: 2000,
            eval_every: 10,
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_iterations == 0
            || self.jobsets_per_iteration == 0
            || self.episodes_per_jobset == 0
            || self.eval_every == 0
            || self.max_episode_length == 0
        {
            return Err("all trainer counts must be >= 1".into());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(format!("discount {} not in (0, 1]", self.discount));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajStep {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    /// Action distribution the policy produced for this observation; kept so
    /// the gradient pass only has to recompute the hidden layer.
    pub probs: Vec<f64>,
}

/// End-of-episode accounting pulled from the final environment state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    /// Slowdowns of finished jobs, plus a lower-bound slowdown
    /// `max(1, elapsed/duration)` for each job still in the system when the
    /// episode was cut.
    pub slowdowns: Vec<f64>,
    /// How many entries of `slowdowns` came from unfinished jobs.
    pub truncated_jobs: usize,
    pub dropped: u32,
    /// Final clock value.
    pub timesteps: u32,
}

/// One episode's worth of training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    /// Discounted suffix sums of the rewards; filled by the trainer.
    pub returns: Vec<f64>,
    pub jobset_id: u64,
    pub stats: EpisodeStats,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self) -> f64 {
        self.returns.first().copied().unwrap_or(0.0)
    }
}

/// Pull per-episode metrics out of a finished (or truncated) environment.
pub fn episode_stats(env: &Env) -> EpisodeStats {
    let state = env.state();
    let mut slowdowns: Vec<f64> = state
        .completed
        .iter()
        .map(|j| crate::env::slowdown(j).expect("completed jobs are finished"))
        .collect();
    let mut truncated_jobs = 0;
    let clock = state.clock;
    let in_system = state
        .running
        .iter()
        .chain(state.queue.iter().flatten())
        .chain(state.backlog.iter());
    for job in in_system {
        let elapsed = f64::from(clock.saturating_sub(job.arrival_time));
        slowdowns.push((elapsed / f64::from(job.duration)).max(1.0));
        truncated_jobs += 1;
    }
    EpisodeStats { slowdowns, truncated_jobs, dropped: state.dropped, timesteps: clock }
}

/// Run one episode with action sampling, recording every decision.
pub fn rollout(
    env_config: &EnvConfig,
    jobset: &JobSet,
    params: &PolicyParams,
    rng: &mut impl Rng,
    max_decisions: usize,
) -> Result<Trajectory, TrainError> {
    let (mut env, mut obs) = Env::reset(env_config.clone(), jobset)?;
    let mut steps = Vec::new();
    while !env.done() && steps.len() < max_decisions {
        let trace = forward(&obs, params)?;
        let action = sample_action(&trace.probs, rng);
        let result = env.apply_action(Action(action))?;
        steps.push(TrajStep { observation: obs, action, reward: result.reward, probs: trace.probs });
        obs = result.observation;
    }
    Ok(Trajectory {
        steps,
        returns: Vec::new(),
        jobset_id: jobset.params.seed,
        stats: episode_stats(&env),
    })
}

/// Run one evaluation episode: the stochastic policy, derandomized by the
/// caller's stream. Returns the episode stats and total reward without
/// retaining a trajectory.
pub fn evaluation_episode(
    env_config: &EnvConfig,
    jobset: &JobSet,
    params: &PolicyParams,
    max_decisions: usize,
    rng: &mut impl Rng,
) -> Result<(EpisodeStats, f64), TrainError> {
    let (mut env, mut obs) = Env::reset(env_config.clone(), jobset)?;
    let mut total_reward = 0.0;
    let mut decisions = 0usize;
    while !env.done() && decisions < max_decisions {
        let trace = forward(&obs, params)?;
        let result = env.apply_action(Action(sample_action(&trace.probs, rng)))?;
        total_reward += result.reward;
        obs = result.observation;
        decisions += 1;
    }
    Ok((episode_stats(&env), total_reward))
}

/// Run one episode with greedy (argmax) action selection; no trajectory kept.
///
/// Not used for evaluation: in this MDP a void or invalid action leaves a
/// drained system unchanged, so a single argmax mistake repeats forever and
/// the episode hangs until the clock cap. Kept for debugging and analysis.
pub fn greedy_episode(
    env_config: &EnvConfig,
    jobset: &JobSet,
    params: &PolicyParams,
    max_decisions: usize,
) -> Result<(EpisodeStats, f64), TrainError> {
    let (mut env, mut obs) = Env::reset(env_config.clone(), jobset)?;
    let mut total_reward = 0.0;
    let mut decisions = 0usize;
    while !env.done() && decisions < max_decisions {
        let trace = forward(&obs, params)?;
        let result = env.apply_action(Action(argmax_action(&trace.probs)))?;
        total_reward += result.reward;
        obs = result.observation;
        decisions += 1;
    }
    Ok((episode_stats(&env), total_reward))
}

/// Discounted suffix sums: `returns[t] = rewards[t] + discount * returns[t+1]`.
pub fn compute_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (ret, &reward) in returns.iter_mut().zip(rewards).rev() {
        acc = reward + discount * acc;
        *ret = acc;
    }
    returns
}

fn fill_returns(traj: &mut Trajectory, discount: f64) {
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
    traj.returns = compute_returns(&rewards, discount);
}

/// Per-timestep baseline: at each `t`, the mean return over the trajectories
/// that reached `t`. Advantage is `return_t - baseline_t`.
pub fn compute_baseline(trajectories: &[Trajectory]) -> Vec<f64> {
    let max_len = trajectories.iter().map(|t| t.returns.len()).max().unwrap_or(0);
    let mut baseline = vec![0.0; max_len];
    for (t, b) in baseline.iter_mut().enumerate() {
        let reaching: Vec<f64> = trajectories
            .iter()
            .filter_map(|traj| traj.returns.get(t).copied())
            .collect();
        *b = reaching.iter().sum::<f64>() / reaching.len() as f64;
    }
    baseline
}

/// Per-iteration training summary; one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Mean discounted return over all episodes of the iteration.
    pub mean_total_reward: f64,
    /// Mean slowdown pooled over all jobs of all episodes (NaN if no jobs).
    pub mean_slowdown: f64,
    /// Mean number of agent decisions per episode.
    pub mean_episode_length: f64,
    /// Measured seconds; the only nondeterministic column.
    pub wall_time: f64,
}

fn run_jobset_rollouts(
    env_config: &EnvConfig,
    jobset: &JobSet,
    params: &PolicyParams,
    config: &TrainConfig,
    iteration: usize,
    jobset_index: usize,
) -> Result<Vec<Trajectory>, TrainError> {
    let episode = |ep: usize| -> Result<Trajectory, TrainError> {
        let mut rng = rngstream::derive(
            config.seed,
            StreamKind::Rollout,
            iteration as u64,
            jobset_index as u64,
            ep as u64,
        );
        let mut traj = rollout(env_config, jobset, params, &mut rng, config.max_episode_length)?;
        fill_returns(&mut traj, config.discount);
        Ok(traj)
    };
    if config.parallel {
        (0..config.episodes_per_jobset).into_par_iter().map(episode).collect()
    } else {
        (0..config.episodes_per_jobset).map(episode).collect()
    }
}

fn trajectory_gradient(
    params: &PolicyParams,
    traj: &Trajectory,
    baseline: &[f64],
) -> Result<(crate::policy::Tensors, usize), TrainError> {
    let mut accum = GradAccum::new(&params.config);
    for (t, step) in traj.steps.iter().enumerate() {
        let advantage = traj.returns[t] - baseline[t];
        accum.accumulate_from_observation(
            params,
            &step.observation,
            &step.probs,
            step.action,
            advantage,
        )?;
    }
    let steps = accum.steps();
    Ok((accum.into_grad(), steps))
}

/// One REINFORCE iteration: roll out every jobset, compute per-jobset
/// baselines, accumulate the policy gradient over all steps (scaled by the
/// total step count), and apply a single optimizer update.
///
/// Gradients are built per trajectory and summed in trajectory order, so the
/// parallel and sequential paths produce identical bits.
pub fn train_iteration(
    params: &mut PolicyParams,
    jobsets: &[JobSet],
    env_config: &EnvConfig,
    config: &TrainConfig,
    iteration: usize,
) -> Result<IterationReport, TrainError> {
    let started = std::time::Instant::now();
    let mut gradient = crate::policy::Tensors::zeros(&params.config);
    let mut total_steps = 0usize;
    let mut episode_returns = Vec::new();
    let mut episode_lengths = Vec::new();
    let mut slowdowns = Vec::new();

    for (jobset_index, jobset) in jobsets.iter().enumerate() {
        let trajectories =
            run_jobset_rollouts(env_config, jobset, params, config, iteration, jobset_index)?;
        let baseline = compute_baseline(&trajectories);
        let partials: Vec<(crate::policy::Tensors, usize)> = if config.parallel {
            trajectories
                .par_iter()
                .map(|traj| trajectory_gradient(params, traj, &baseline))
                .collect::<Result<_, _>>()?
        } else {
            trajectories
                .iter()
                .map(|traj| trajectory_gradient(params, traj, &baseline))
                .collect::<Result<_, _>>()?
        };
        for (partial, steps) in &partials {
            gradient.add_assign(partial);
            total_steps += steps;
        }
        for traj in &trajectories {
            episode_returns.push(traj.discounted_return());
            episode_lengths.push(traj.steps.len() as f64);
            slowdowns.extend_from_slice(&traj.stats.slowdowns);
        }
    }

    if total_steps > 0 {
        gradient.scale(1.0 / total_steps as f64);
    }
    policy::apply_update(params, &gradient)?;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(IterationReport {
        iteration,
        mean_total_reward: if episode_returns.is_empty() { 0.0 } else { mean(&episode_returns) },
        mean_slowdown: mean(&slowdowns),
        mean_episode_length: if episode_lengths.is_empty() { 0.0 } else { mean(&episode_lengths) },
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Evaluation summary over held-out jobsets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Pooled over all jobs of all episodes; absent when no jobs existed.
    pub mean_slowdown: Option<f64>,
    /// Mean total (undiscounted) reward per episode.
    pub mean_total_reward: f64,
    pub jobs_dropped: u64,
    pub truncated_jobs: u64,
    pub episodes: usize,
}

/// Evaluate the policy over held-out jobsets: one episode per jobset,
/// executing the stochastic policy exactly as trained, derandomized by a
/// stream derived from `eval_seed` and the jobset index. Identical inputs
/// give identical summaries.
pub fn evaluate(
    params: &PolicyParams,
    jobsets: &[JobSet],
    env_config: &EnvConfig,
    max_decisions: usize,
    eval_seed: u64,
) -> Result<EvalSummary, TrainError> {
    let mut slowdowns = Vec::new();
    let mut rewards = Vec::new();
    let mut dropped = 0u64;
    let mut truncated = 0u64;
    for (index, jobset) in jobsets.iter().enumerate() {
        let mut rng =
            rngstream::derive(eval_seed, StreamKind::Evaluation, index as u64, 0, 0);
        let (stats, total_reward) =
            evaluation_episode(env_config, jobset, params, max_decisions, &mut rng)?;
        slowdowns.extend_from_slice(&stats.slowdowns);
        rewards.push(total_reward);
        dropped += u64::from(stats.dropped);
        truncated += stats.truncated_jobs as u64;
    }
    Ok(EvalSummary {
        mean_slowdown: if slowdowns.is_empty() {
            None
        } else {
            Some(slowdowns.iter().sum::<f64>() / slowdowns.len() as f64)
        },
        mean_total_reward: if rewards.is_empty() {
            0.0
        } else {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        },
        jobs_dropped: dropped,
        truncated_jobs: truncated,
        episodes: jobsets.len(),
    })
}
