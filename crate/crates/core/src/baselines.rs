//! Non-learning reference schedulers: shortest-job-first, packer, and a
//! uniform-random scheduler, plus an exhaustive-search oracle that finds the
//! minimum total slowdown on tiny instances.

use rand::Rng;
use thiserror::Error;

use crate::env::{
    earliest_placement, Action, Env, EnvConfig, EnvError, EnvState,
};
use crate::trainer::{episode_stats, EpisodeStats};
use crate::workload::JobSet;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("instance too large for exhaustive search: {jobs} jobs, limit {limit}")]
    TooLarge { jobs: usize, limit: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    Sjf,
    Packer,
    Random,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] =
        [HeuristicKind::Sjf, HeuristicKind::Packer, HeuristicKind::Random];

    pub fn name(&self) -> &'static str {
        match self {
            HeuristicKind::Sjf => "sjf",
            HeuristicKind::Packer => "packer",
            HeuristicKind::Random => "random",
        }
    }
}

/// Feasible (slot, machine) pairs: an occupied queue slot whose job has some
/// placement on that machine within the horizon.
fn feasible_pairs(state: &EnvState, config: &EnvConfig) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (slot, entry) in state.queue.iter().enumerate() {
        let Some(job) = entry else { continue };
        for machine in 0..config.num_machines {
            if earliest_placement(&state.grid, machine, job).is_some() {
                pairs.push((slot, machine));
            }
        }
    }
    pairs
}

/// Pick the next action for a heuristic scheduler; void when nothing fits.
///
/// SJF takes the feasible job with the smallest duration (ties: lowest slot)
/// and the machine where it starts earliest (ties: lowest machine). Packer
/// maximizes the inner product between job demand and the machine's free
/// capacity in the current row (ties: lowest slot, then machine). Random is
/// uniform over feasible pairs.
pub fn heuristic_action(
    state: &EnvState,
    config: &EnvConfig,
    kind: HeuristicKind,
    rng: &mut impl Rng,
) -> Action {
    let void = Action(config.action_space_size() - 1);
    let pairs = feasible_pairs(state, config);
    if pairs.is_empty() {
        return void;
    }
    let (slot, machine) = match kind {
        HeuristicKind::Random => pairs[rng.gen_range(0..pairs.len())],
        HeuristicKind::Sjf => {
            let slot = pairs
                .iter()
                .map(|&(s, _)| s)
                .min_by_key(|&s| {
                    let job = state.queue[s].as_ref().expect("feasible slot is occupied");
                    (job.duration, s)
                })
                .expect("pairs nonempty");
            let job = state.queue[slot].as_ref().expect("feasible slot is occupied");
            let machine = pairs
                .iter()
                .filter(|&&(s, _)| s == slot)
                .map(|&(_, m)| m)
                .min_by_key(|&m| {
                    (earliest_placement(&state.grid, m, job).expect("pair is feasible"), m)
                })
                .expect("at least one machine is feasible");
            (slot, machine)
        }
        HeuristicKind::Packer => {
            let mut best = pairs[0];
            let mut best_score = -1i64;
            for &(s, m) in &pairs {
                let job = state.queue[s].as_ref().expect("feasible slot is occupied");
                let score: i64 = job
                    .demand
                    .iter()
                    .enumerate()
                    .map(|(r, &need)| i64::from(need) * i64::from(state.grid.free_units(m, r, 0)))
                    .sum();
                if score > best_score {
                    best_score = score;
                    best = (s, m);
                }
            }
            best
        }
    };
    Action(machine * config.queue_length + slot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicSummary {
    pub stats: EpisodeStats,
    pub total_reward: f64,
    /// Mean slowdown over the episode's jobs; absent when there were none.
    pub mean_slowdown: Option<f64>,
}

/// Drive a full episode with a heuristic: keep scheduling until it returns
/// void (which advances time), exactly like the agent's multi-action protocol.
pub fn run_heuristic_episode(
    env_config: &EnvConfig,
    jobset: &JobSet,
    kind: HeuristicKind,
    rng: &mut impl Rng,
) -> Result<HeuristicSummary, BaselineError> {
    let (mut env, _) = Env::reset(env_config.clone(), jobset)?;
    let mut total_reward = 0.0;
    while !env.done() {
        let action = heuristic_action(env.state(), env.config(), kind, rng);
        let result = env.apply_action(action)?;
        total_reward += result.reward;
    }
    let stats = episode_stats(&env);
    let mean_slowdown = if stats.slowdowns.is_empty() {
        None
    } else {
        Some(stats.slowdowns.iter().sum::<f64>() / stats.slowdowns.len() as f64)
    };
    Ok(HeuristicSummary { stats, total_reward, mean_slowdown })
}

/// One job placement found by the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedJob {
    pub job_id: u32,
    pub machine: usize,
    pub start: u32,
}

/// Largest instance the exhaustive search accepts.
pub const ORACLE_JOB_LIMIT: usize = 5;

struct OracleSearch<'a> {
    jobs: &'a [crate::workload::Job],
    num_machines: usize,
    capacity: &'a [u32],
    /// usage[(machine * horizon + t) * d + r]
    usage: Vec<u32>,
    horizon: usize,
    latest_start: u32,
    best: f64,
    best_plan: Vec<PlannedJob>,
    current: Vec<PlannedJob>,
}

impl OracleSearch<'_> {
    fn usage_index(&self, machine: usize, t: usize, r: usize) -> usize {
        (machine * self.horizon + t) * self.capacity.len() + r
    }

    fn fits(&self, machine: usize, job: &crate::workload::Job, start: u32) -> bool {
        (start..start + job.duration).all(|t| {
            job.demand.iter().enumerate().all(|(r, &need)| {
                self.usage[self.usage_index(machine, t as usize, r)] + need <= self.capacity[r]
            })
        })
    }

    fn mark(&mut self, machine: usize, job: &crate::workload::Job, start: u32, sign: i64) {
        for t in start..start + job.duration {
            for (r, &need) in job.demand.iter().enumerate() {
                let idx = self.usage_index(machine, t as usize, r);
                self.usage[idx] = (i64::from(self.usage[idx]) + sign * i64::from(need)) as u32;
            }
        }
    }

    fn search(&mut self, depth: usize, partial: f64) {
        if depth == self.jobs.len() {
            if partial < self.best {
                self.best = partial;
                self.best_plan = self.current.clone();
            }
            return;
        }
        // Every remaining job has slowdown >= 1.
        let remaining = (self.jobs.len() - depth) as f64;
        if partial + remaining >= self.best {
            return;
        }
        let job = &self.jobs[depth];
        for start in job.arrival_time..=self.latest_start {
            let slowdown =
                f64::from(start + job.duration - job.arrival_time) / f64::from(job.duration);
            if partial + slowdown + (remaining - 1.0) >= self.best {
                break; // starts only get later from here
            }
            for machine in 0..self.num_machines {
                if self.fits(machine, job, start) {
                    self.mark(machine, job, start, 1);
                    self.current.push(PlannedJob { job_id: job.id, machine, start });
                    self.search(depth + 1, partial + slowdown);
                    self.current.pop();
                    self.mark(machine, job, start, -1);
                }
            }
        }
    }
}

/// Exhaustive minimum of the total slowdown over all machine assignments and
/// start times respecting arrivals and capacity. Start times are searched up
/// to `max arrival + sum of durations`, which bounds every left-shifted
/// optimal schedule. Instances above [`ORACLE_JOB_LIMIT`] jobs are rejected.
pub fn brute_force_optimal(
    jobset: &JobSet,
    env_config: &EnvConfig,
) -> Result<(f64, Vec<PlannedJob>), BaselineError> {
    if jobset.jobs.len() > ORACLE_JOB_LIMIT {
        return Err(BaselineError::TooLarge {
            jobs: jobset.jobs.len(),
            limit: ORACLE_JOB_LIMIT,
        });
    }
    env_config.validate()?;
    let max_arrival = jobset.jobs.iter().map(|j| j.arrival_time).max().unwrap_or(0);
    let total_duration: u32 = jobset.jobs.iter().map(|j| j.duration).sum();
    let latest_start = max_arrival + total_duration;
    let max_duration = jobset.jobs.iter().map(|j| j.duration).max().unwrap_or(0);
    let horizon = (latest_start + max_duration + 1) as usize;
    let d = env_config.num_resources;
    let mut search = OracleSearch {
        jobs: &jobset.jobs,
        num_machines: env_config.num_machines,
        capacity: &env_config.capacity,
        usage: vec![0; env_config.num_machines * horizon * d],
        horizon,
        latest_start,
        best: f64::INFINITY,
        best_plan: Vec::new(),
        current: Vec::with_capacity(jobset.jobs.len()),
    };
    search.search(0, 0.0);
    Ok((search.best, search.best_plan))
}
