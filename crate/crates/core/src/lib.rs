//! Discrete-time cluster job scheduling with a policy-gradient scheduler.
//!
//! The crate simulates a small cluster of machines, each with several resource
//! types, receiving jobs over time. Jobs wait in a fixed-length queue (with a
//! bounded backlog behind it) until a scheduler places them on a machine at the
//! earliest feasible timestep. The scheduler can be a hand-rolled convolutional
//! policy network trained with REINFORCE, one of the classic heuristics
//! (shortest-job-first, packer, random), or a brute-force oracle on tiny
//! instances.
//!
//! Modules:
//! - [`workload`]: reproducible random jobset generation and the jobset file format
//! - [`env`]: the scheduling MDP (grid, queue, backlog, rewards, observations)
//! - [`policy`]: the convolutional softmax policy, its gradients, and checkpoints
//! - [`trainer`]: rollouts, returns, baselines, and the training iteration loop
//! - [`baselines`]: SJF / packer / random schedulers and an exact tiny-instance oracle
//! - [`config`]: experiment configuration files tying everything together
//! - [`harness`]: train / evaluate / compare / generate entry points used by the CLI

pub mod baselines;
pub mod config;
pub mod env;
pub mod harness;
pub mod policy;
pub mod rngstream;
pub mod trainer;
pub mod workload;

pub use config::ExperimentConfig;
pub use env::{Action, EnvConfig, Observation, RewardWeights, StepResult};
pub use policy::{NetConfig, PolicyParams};
pub use trainer::{TrainConfig, Trajectory};
pub use workload::{Job, JobSet, WorkloadParams};
