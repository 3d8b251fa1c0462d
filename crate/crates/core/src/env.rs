//! The discrete-time cluster scheduling MDP.
//!
//! A cluster of `m` machines shares `d` resource types. Occupancy is tracked
//! on a rolling lookahead grid: one row per future timestep, one column per
//! resource unit. The agent sees the grid, the resource profiles of the
//! queued jobs, and the backlog count as one binary image, and picks actions
//! `machine * q + slot` (or the void action `m * q`). Within a timestep it
//! may keep scheduling until it picks void or an action that cannot execute;
//! then time advances, running jobs progress, and new jobs arrive.
//!
//! The reward for a time advance is the negative weighted sum of reciprocal
//! durations over every job in the system during the elapsed step. With unit
//! weights this makes an episode's total reward equal the negative sum of job
//! slowdowns: a job that spends `C` steps in the system contributes `-1/T`
//! exactly `C` times, and `C/T` is its slowdown.

use std::collections::VecDeque;

use thiserror::Error;

use crate::workload::{Job, JobSet};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {index} out of range for action space of size {size}")]
    ActionOutOfRange { index: usize, size: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("job {0} has not finished")]
    Unfinished(u32),
}

/// Per-term weights of the reward: `alpha[l]` for jobs allocated to machine
/// `l`, `beta` for queued jobs, `gamma` for backlogged jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
}

impl RewardWeights {
    pub fn ones(num_machines: usize) -> Self {
        RewardWeights { alpha: vec![1.0; num_machines], beta: 1.0, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub num_machines: usize,
    pub num_resources: usize,
    /// Units per resource; shared by all machines.
    pub capacity: Vec<u32>,
    /// Rows of the occupancy grid (timesteps rendered ahead of the clock).
    pub lookahead_horizon: usize,
    /// Number of visible queue slots.
    pub queue_length: usize,
    /// Bound on the overflow backlog behind the queue.
    pub backlog_capacity: usize,
    pub reward_weights: RewardWeights,
    /// Episode is cut when the clock reaches this many timesteps.
    pub max_episode_length: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            num_machines: 1,
            num_resources: 2,
            capacity: vec![10, 10],
            lookahead_horizon: 20,
            queue_length: 5,
            backlog_capacity: 80,
            reward_weights: RewardWeights::ones(1),
            max_episode_length: 1000,
        }
    }
}

impl EnvConfig {
    /// Number of legal action indices: one per (machine, slot) pair plus void.
    pub fn action_space_size(&self) -> usize {
        self.num_machines * self.queue_length + 1
    }

    /// Columns of the backlog panel in the observation image.
    pub fn backlog_panel_width(&self) -> usize {
        self.backlog_capacity.div_ceil(self.lookahead_horizon)
    }

    /// Total observation width: machine panels, queue panels, backlog panel.
    pub fn observation_width(&self) -> usize {
        let per_entity: usize = self.capacity.iter().map(|&c| c as usize).sum();
        (self.num_machines + self.queue_length) * per_entity + self.backlog_panel_width()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_machines == 0 || self.num_resources == 0 || self.queue_length == 0 {
            return Err(EnvError::Config("machines, resources and queue slots must all be >= 1".into()));
        }
        if self.capacity.len() != self.num_resources || self.capacity.iter().any(|&c| c == 0) {
            return Err(EnvError::Config(format!(
                "need {} positive capacities, got {:?}",
                self.num_resources, self.capacity
            )));
        }
        if self.lookahead_horizon == 0 {
            return Err(EnvError::Config("lookahead_horizon must be >= 1".into()));
        }
        if self.reward_weights.alpha.len() != self.num_machines {
            return Err(EnvError::Config(format!(
                "{} alpha weights for {} machines",
                self.reward_weights.alpha.len(),
                self.num_machines
            )));
        }
        if self.reward_weights.alpha.iter().any(|&a| a < 0.0)
            || self.reward_weights.beta < 0.0
            || self.reward_weights.gamma < 0.0
        {
            return Err(EnvError::Config("reward weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Rolling binary occupancy of every machine: for each (machine, resource)
/// pair, `lookahead_horizon` rows of `capacity[r]` unit cells, row 0 being
/// the current timestep. Allocated units pack left, so a row is fully
/// described by its used-unit count; `cell` exposes the binary view.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGrid {
    num_machines: usize,
    num_resources: usize,
    horizon: usize,
    capacity: Vec<u32>,
    used: Vec<u32>,
}

impl ClusterGrid {
    pub fn new(num_machines: usize, capacity: &[u32], horizon: usize) -> Self {
        ClusterGrid {
            num_machines,
            num_resources: capacity.len(),
            horizon,
            capacity: capacity.to_vec(),
            used: vec![0; num_machines * capacity.len() * horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn idx(&self, machine: usize, resource: usize, row: usize) -> usize {
        (machine * self.num_resources + resource) * self.horizon + row
    }

    pub fn used_units(&self, machine: usize, resource: usize, row: usize) -> u32 {
        self.used[self.idx(machine, resource, row)]
    }

    pub fn free_units(&self, machine: usize, resource: usize, row: usize) -> u32 {
        self.capacity[resource] - self.used_units(machine, resource, row)
    }

    /// Binary cell of the packed-left occupancy matrix.
    pub fn cell(&self, machine: usize, resource: usize, row: usize, col: u32) -> bool {
        col < self.used_units(machine, resource, row)
    }

    /// Would `demand` fit on `machine` for rows `[start, start + duration)`?
    pub fn fits(&self, machine: usize, demand: &[u32], start: usize, duration: usize) -> bool {
        if start + duration > self.horizon {
            return false;
        }
        demand.iter().enumerate().all(|(r, &need)| {
            (start..start + duration).all(|row| self.free_units(machine, r, row) >= need)
        })
    }

    /// Mark `demand` units allocated on `machine` for rows `[start, start + duration)`.
    /// Callers must have checked `fits`.
    pub fn allocate(&mut self, machine: usize, demand: &[u32], start: usize, duration: usize) {
        debug_assert!(self.fits(machine, demand, start, duration));
        for (r, &need) in demand.iter().enumerate() {
            for row in start..start + duration {
                let i = self.idx(machine, r, row);
                self.used[i] += need;
            }
        }
    }

    /// Advance one timestep: drop row 0, shift every row up, zero the last row.
    pub fn shift_up(&mut self) {
        for chunk in self.used.chunks_mut(self.horizon) {
            chunk.rotate_left(1);
            chunk[self.horizon - 1] = 0;
        }
    }
}

/// Smallest start offset at which `job` fits on `machine` within the horizon.
pub fn earliest_placement(grid: &ClusterGrid, machine: usize, job: &Job) -> Option<usize> {
    let duration = job.duration as usize;
    if duration > grid.horizon {
        return None;
    }
    (0..=grid.horizon - duration).find(|&start| grid.fits(machine, &job.demand, start, duration))
}

/// An action index in `[0, m*q]`; `m*q` is the void action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Action(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionTarget {
    Schedule { machine: usize, slot: usize },
    Void,
}

/// Decode `index = machine * q + slot`, with `m * q` reserved for void.
pub fn decode_action(action: Action, config: &EnvConfig) -> Result<ActionTarget, EnvError> {
    let size = config.action_space_size();
    let q = config.queue_length;
    match action.0 {
        i if i < size - 1 => Ok(ActionTarget::Schedule { machine: i / q, slot: i % q }),
        i if i == size - 1 => Ok(ActionTarget::Void),
        i => Err(EnvError::ActionOutOfRange { index: i, size }),
    }
}

/// The binary observation image: machine occupancy panels, queue slot
/// profiles, and the backlog count, concatenated left to right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells, each 0 or 1.
    pub data: Vec<u8>,
}

impl Observation {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Observation { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize) {
        self.data[row * self.cols + col] = 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub time_advanced: bool,
    pub done: bool,
}

/// Full simulator state. Owned by one episode at a time; every operation is
/// deterministic in the state and its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub grid: ClusterGrid,
    /// Fixed-length queue; `None` marks an empty slot.
    pub queue: Vec<Option<Job>>,
    /// Overflow buffer behind the queue, promoted FIFO.
    pub backlog: VecDeque<Job>,
    /// Allocated, unfinished jobs. `schedule_time` and `assigned_machine` set.
    pub running: Vec<Job>,
    pub clock: u32,
    /// Jobs not yet arrived, in arrival order.
    pub pending: VecDeque<Job>,
    pub completed: Vec<Job>,
    /// Jobs discarded because the backlog was full.
    pub dropped: u32,
}

impl EnvState {
    /// No job left anywhere in the system and none still to arrive.
    pub fn drained(&self) -> bool {
        self.pending.is_empty()
            && self.backlog.is_empty()
            && self.running.is_empty()
            && self.queue.iter().all(Option::is_none)
    }
}

/// Reward of one elapsed timestep: minus the weighted sum of `1/T` over jobs
/// allocated to each machine, waiting in the queue, and waiting in the backlog.
pub fn compute_reward(state: &EnvState, weights: &RewardWeights) -> f64 {
    let mut total = 0.0;
    for job in &state.running {
        let machine = job.assigned_machine.expect("running job has a machine");
        total += weights.alpha[machine] / f64::from(job.duration);
    }
    total += weights.beta
        * state
            .queue
            .iter()
            .flatten()
            .map(|j| 1.0 / f64::from(j.duration))
            .sum::<f64>();
    total += weights.gamma
        * state
            .backlog
            .iter()
            .map(|j| 1.0 / f64::from(j.duration))
            .sum::<f64>();
    if total == 0.0 {
        0.0
    } else {
        -total
    }
}

/// Completion time in system over ideal duration; defined once a job finished.
pub fn slowdown(job: &Job) -> Result<f64, EnvError> {
    let finish = job.finish_time.ok_or(EnvError::Unfinished(job.id))?;
    Ok(f64::from(finish - job.arrival_time) / f64::from(job.duration))
}

/// Render the binary observation image for a state.
pub fn encode_observation(state: &EnvState, config: &EnvConfig) -> Observation {
    let rows = config.lookahead_horizon;
    let mut obs = Observation::zeros(rows, config.observation_width());
    let mut col0 = 0usize;

    for machine in 0..config.num_machines {
        for resource in 0..config.num_resources {
            let width = config.capacity[resource] as usize;
            for row in 0..rows {
                let used = state.grid.used_units(machine, resource, row) as usize;
                for c in 0..used {
                    obs.set(row, col0 + c);
                }
            }
            col0 += width;
        }
    }

    for slot in &state.queue {
        for resource in 0..config.num_resources {
            let width = config.capacity[resource] as usize;
            if let Some(job) = slot {
                let height = (job.duration as usize).min(rows);
                for row in 0..height {
                    for c in 0..job.demand[resource] as usize {
                        obs.set(row, col0 + c);
                    }
                }
            }
            col0 += width;
        }
    }

    // Backlog panel: only the count is visible, filled column-major.
    for k in 0..state.backlog.len() {
        obs.set(k % rows, col0 + k / rows);
    }
    obs
}

/// One episode of the scheduling MDP over a fixed jobset.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: EnvState,
}

impl Env {
    /// Build the initial state: empty cluster, arrivals due at time 0 already
    /// admitted (queue first, then backlog).
    pub fn reset(config: EnvConfig, jobset: &JobSet) -> Result<(Self, Observation), EnvError> {
        config.validate()?;
        if jobset.num_resources() != config.num_resources {
            return Err(EnvError::Config(format!(
                "jobset has {} resources, environment has {}",
                jobset.num_resources(),
                config.num_resources
            )));
        }
        for job in &jobset.jobs {
            for (r, &need) in job.demand.iter().enumerate() {
                if need > config.capacity[r] {
                    return Err(EnvError::Config(format!(
                        "job {} demands {} units of resource {} but capacity is {}",
                        job.id, need, r, config.capacity[r]
                    )));
                }
            }
            if job.duration as usize > config.lookahead_horizon {
                return Err(EnvError::Config(format!(
                    "job {} lasts {} steps but the lookahead horizon is {}",
                    job.id, job.duration, config.lookahead_horizon
                )));
            }
        }
        let mut state = EnvState {
            grid: ClusterGrid::new(config.num_machines, &config.capacity, config.lookahead_horizon),
            queue: vec![None; config.queue_length],
            backlog: VecDeque::new(),
            running: Vec::new(),
            clock: 0,
            pending: jobset.jobs.iter().cloned().collect(),
            completed: Vec::new(),
            dropped: 0,
        };
        admit_arrivals(&mut state, &config);
        let obs = encode_observation(&state, &config);
        Ok((Env { config, state }, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn observation(&self) -> Observation {
        encode_observation(&self.state, &self.config)
    }

    pub fn done(&self) -> bool {
        self.state.drained() || self.state.clock >= self.config.max_episode_length
    }

    /// Execute one agent decision. A valid placement consumes no time and
    /// yields reward 0; void and invalid actions (empty slot, or no feasible
    /// placement within the horizon) advance time instead.
    pub fn apply_action(&mut self, action: Action) -> Result<StepResult, EnvError> {
        match decode_action(action, &self.config)? {
            ActionTarget::Void => Ok(self.advance_time()),
            ActionTarget::Schedule { machine, slot } => {
                let placement = self.state.queue[slot]
                    .as_ref()
                    .and_then(|job| earliest_placement(&self.state.grid, machine, job));
                match placement {
                    None => Ok(self.advance_time()),
                    Some(offset) => {
                        let mut job = self.state.queue[slot].take().expect("slot checked above");
                        job.schedule_time = Some(self.state.clock + offset as u32);
                        job.assigned_machine = Some(machine);
                        self.state.grid.allocate(machine, &job.demand, offset, job.duration as usize);
                        self.state.running.push(job);
                        Ok(StepResult {
                            observation: self.observation(),
                            reward: 0.0,
                            time_advanced: false,
                            done: false,
                        })
                    }
                }
            }
        }
    }

    /// Advance the clock one step. The reward covers the elapsed step, i.e. it
    /// is computed over the jobs in the system before the shift; then running
    /// jobs progress (completions recorded), the backlog is promoted FIFO, and
    /// newly due arrivals are admitted.
    pub fn advance_time(&mut self) -> StepResult {
        let reward = compute_reward(&self.state, &self.config.reward_weights);

        self.state.clock += 1;
        self.state.grid.shift_up();

        let clock = self.state.clock;
        let mut i = 0;
        while i < self.state.running.len() {
            let start = self.state.running[i].schedule_time.expect("running job has a start");
            let duration = self.state.running[i].duration;
            if start + duration <= clock {
                let mut job = self.state.running.swap_remove(i);
                job.finish_time = Some(clock);
                self.state.completed.push(job);
            } else {
                i += 1;
            }
        }

        promote_backlog(&mut self.state);
        admit_arrivals(&mut self.state, &self.config);

        StepResult {
            observation: self.observation(),
            reward,
            time_advanced: true,
            done: self.done(),
        }
    }
}

fn promote_backlog(state: &mut EnvState) {
    for slot in state.queue.iter_mut() {
        if slot.is_none() {
            match state.backlog.pop_front() {
                Some(job) => *slot = Some(job),
                None => break,
            }
        }
    }
}

fn admit_arrivals(state: &mut EnvState, config: &EnvConfig) {
    while state.pending.front().is_some_and(|j| j.arrival_time <= state.clock) {
        let job = state.pending.pop_front().expect("front checked");
        if let Some(slot) = state.queue.iter_mut().find(|s| s.is_none()) {
            *slot = Some(job);
        } else if state.backlog.len() < config.backlog_capacity {
            state.backlog.push_back(job);
        } else {
            state.dropped += 1;
        }
    }
}
