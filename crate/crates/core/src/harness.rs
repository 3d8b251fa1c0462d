//! Experiment orchestration behind the CLI: generating jobset files, the
//! training loop with its metrics CSV and periodic checkpoints, checkpoint
//! resume, held-out evaluation, and the scheduler comparison table.
//!
//! Determinism contract: everything is a pure function of the config (seed
//! included), so rerunning a command reproduces its outputs except for the
//! `wall_time` metrics column, which reports measured seconds.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{run_heuristic_episode, BaselineError, HeuristicKind};
use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{Action, Env, EnvError};
use crate::policy::{self, PolicyError, PolicyParams};
use crate::rngstream::{self, StreamKind};
use crate::trainer::{self, EvalSummary, IterationReport, TrainError};
use crate::workload::{self, JobSet, WorkloadError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str =
    "iteration,mean_total_reward,mean_slowdown,mean_episode_length,wall_time";
pub const COMPARISON_HEADER: &str =
    "scheduler,mean_slowdown,std_slowdown,mean_reward,jobs_dropped";
/// Held-out jobsets used for the evaluation report written after training.
pub const FINAL_EVAL_JOBSETS: usize = 20;

/// Training jobsets are fixed across iterations (stream indices
/// `0..jobsets_per_iteration` of the master seed), so learning curves track
/// progress on a stable set; held-out evaluation uses a disjoint stream.
pub fn training_jobsets(config: &ExperimentConfig) -> Result<Vec<JobSet>, HarnessError> {
    (0..config.train.jobsets_per_iteration as u64)
        .map(|i| {
            workload::generate_jobset_stream(
                &config.workload,
                config.train.seed,
                StreamKind::TrainJobset,
                i,
            )
            .map_err(HarnessError::from)
        })
        .collect()
}

/// Held-out jobsets; a different stream family from the training set.
pub fn eval_jobsets(
    config: &ExperimentConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<JobSet>, HarnessError> {
    (0..count as u64)
        .map(|i| {
            workload::generate_jobset_stream(&config.workload, seed, StreamKind::EvalJobset, i)
                .map_err(HarnessError::from)
        })
        .collect()
}

pub fn checkpoint_path(out_dir: &Path, completed_iterations: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_iter{completed_iterations:06}.ckpt"))
}

/// Find the checkpoint with the highest completed-iteration count.
pub fn latest_checkpoint(out_dir: &Path) -> Option<(usize, PathBuf)> {
    let entries = fs::read_dir(out_dir).ok()?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(number) = name
            .strip_prefix("checkpoint_iter")
            .and_then(|rest| rest.strip_suffix(".ckpt"))
            .and_then(|digits| digits.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(n, _)| number > *n) {
            best = Some((number, entry.path()));
        }
    }
    best
}

fn format_metrics_row(report: &IterationReport) -> String {
    format!(
        "{},{},{},{},{:.3}",
        report.iteration + 1,
        report.mean_total_reward,
        report.mean_slowdown,
        report.mean_episode_length,
        report.wall_time
    )
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub reports: Vec<IterationReport>,
    pub final_eval: EvalSummary,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
}

/// Run (or resume) training per the config: one metrics CSV row per
/// iteration, a checkpoint every `eval_every` iterations and at the end, and
/// a held-out evaluation report when done. `on_iteration` observes each
/// report as it lands.
pub fn run_training(
    config: &ExperimentConfig,
    resume: bool,
    mut on_iteration: impl FnMut(&IterationReport),
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let metrics_path = out_dir.join(METRICS_FILE);

    let (mut params, start_iteration) = if resume {
        let (completed, path) = latest_checkpoint(out_dir).ok_or_else(|| {
            HarnessError::Other(format!(
                "no checkpoint_iter*.ckpt found under {} to resume from",
                out_dir.display()
            ))
        })?;
        if !metrics_path.exists() {
            return Err(HarnessError::Other(format!(
                "cannot resume: {} is missing",
                metrics_path.display()
            )));
        }
        (policy::load_params_expecting(&path, &config.net)?, completed)
    } else {
        let mut rng = rngstream::derive(config.train.seed, StreamKind::ParamInit, 0, 0, 0);
        let params = PolicyParams::init(config.net.clone(), &mut rng)?;
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(io_err(&metrics_path))?;
        (params, 0)
    };

    let jobsets = training_jobsets(config)?;
    let mut metrics = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;

    let mut reports = Vec::new();
    for iteration in start_iteration..config.train.num_iterations {
        let report =
            trainer::train_iteration(&mut params, &jobsets, &config.env, &config.train, iteration)?;
        writeln!(metrics, "{}", format_metrics_row(&report)).map_err(io_err(&metrics_path))?;
        on_iteration(&report);
        let completed = iteration + 1;
        if completed % config.train.eval_every == 0 || completed == config.train.num_iterations {
            policy::save_params(&params, &checkpoint_path(out_dir, completed))?;
        }
        reports.push(report);
    }

    let final_checkpoint = checkpoint_path(out_dir, config.train.num_iterations);
    if !final_checkpoint.exists() {
        policy::save_params(&params, &final_checkpoint)?;
    }

    let held_out = eval_jobsets(config, config.train.seed, FINAL_EVAL_JOBSETS)?;
    let final_eval =
        trainer::evaluate(&params, &held_out, &config.env, config.train.max_episode_length, config.train.seed)?;
    let eval_path = out_dir.join("final_eval.txt");
    fs::write(&eval_path, format_eval(&final_eval)).map_err(io_err(&eval_path))?;

    Ok(TrainOutcome { reports, final_eval, final_checkpoint, metrics_path })
}

fn format_eval(eval: &EvalSummary) -> String {
    let slowdown = match eval.mean_slowdown {
        Some(s) => format!("{s}"),
        None => "n/a (no jobs)".to_string(),
    };
    format!(
        "episodes: {}\nmean_slowdown: {}\nmean_total_reward: {}\njobs_dropped: {}\ntruncated_jobs: {}\n",
        eval.episodes, slowdown, eval.mean_total_reward, eval.jobs_dropped, eval.truncated_jobs
    )
}

/// Write `count` jobset files (`jobset_0000.txt`, ...) into `out_dir`; the
/// same seed reproduces the same files, and they match what training with
/// that seed would see.
pub fn run_generate(
    config: &ExperimentConfig,
    seed: u64,
    count: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let jobset = workload::generate_jobset_stream(
            &config.workload,
            seed,
            StreamKind::TrainJobset,
            i as u64,
        )?;
        let path = out_dir.join(format!("jobset_{i:04}.txt"));
        workload::save_jobset(&jobset, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Evaluate a checkpoint greedily on freshly generated held-out jobsets.
pub fn run_evaluate(
    config: &ExperimentConfig,
    checkpoint: &Path,
    seed: u64,
    num_jobsets: usize,
) -> Result<EvalSummary, HarnessError> {
    let params = policy::load_params_expecting(checkpoint, &config.net)?;
    let jobsets = eval_jobsets(config, seed, num_jobsets)?;
    Ok(trainer::evaluate(&params, &jobsets, &config.env, config.train.max_episode_length, seed)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scheduler: String,
    /// Mean over per-episode mean slowdowns (episodes with no jobs excluded).
    pub mean_slowdown: f64,
    /// Population standard deviation over the same per-episode means.
    pub std_slowdown: f64,
    pub mean_reward: f64,
    pub jobs_dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub num_jobsets: usize,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_HEADER}\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.scheduler, row.mean_slowdown, row.std_slowdown, row.mean_reward, row.jobs_dropped
            ));
        }
        out
    }

    pub fn row(&self, scheduler: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scheduler == scheduler)
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "comparison over {} held-out jobsets:", self.num_jobsets)?;
        writeln!(
            f,
            "{:<10} {:>14} {:>14} {:>14} {:>8}",
            "scheduler", "mean_slowdown", "std_slowdown", "mean_reward", "dropped"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<10} {:>14.4} {:>14.4} {:>14.2} {:>8}",
                row.scheduler, row.mean_slowdown, row.std_slowdown, row.mean_reward, row.jobs_dropped
            )?;
        }
        Ok(())
    }
}

fn summarize(scheduler: &str, episode_slowdowns: &[f64], rewards: &[f64], dropped: u64) -> ComparisonRow {
    let n = episode_slowdowns.len() as f64;
    let mean = if episode_slowdowns.is_empty() {
        f64::NAN
    } else {
        episode_slowdowns.iter().sum::<f64>() / n
    };
    let std = if episode_slowdowns.is_empty() {
        f64::NAN
    } else {
        (episode_slowdowns.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt()
    };
    let mean_reward = if rewards.is_empty() {
        0.0
    } else {
        rewards.iter().sum::<f64>() / rewards.len() as f64
    };
    ComparisonRow {
        scheduler: scheduler.to_string(),
        mean_slowdown: mean,
        std_slowdown: std,
        mean_reward,
        jobs_dropped: dropped,
    }
}

/// Evaluate the checkpointed policy (greedy) against SJF, packer, and random
/// on the same freshly generated held-out jobsets.
pub fn run_compare(
    config: &ExperimentConfig,
    checkpoint: &Path,
    seed: u64,
    num_jobsets: usize,
) -> Result<ComparisonTable, HarnessError> {
    let params = policy::load_params_expecting(checkpoint, &config.net)?;
    let jobsets = eval_jobsets(config, seed, num_jobsets)?;

    let mut rows = Vec::new();

    let mut drl_slowdowns = Vec::new();
    let mut drl_rewards = Vec::new();
    let mut drl_dropped = 0u64;
    for (jobset_index, jobset) in jobsets.iter().enumerate() {
        let mut rng =
            rngstream::derive(seed, StreamKind::Evaluation, jobset_index as u64, 0, 0);
        let (stats, reward) = trainer::evaluation_episode(
            &config.env,
            jobset,
            &params,
            config.train.max_episode_length,
            &mut rng,
        )?;
        if !stats.slowdowns.is_empty() {
            drl_slowdowns
                .push(stats.slowdowns.iter().sum::<f64>() / stats.slowdowns.len() as f64);
        }
        drl_rewards.push(reward);
        drl_dropped += u64::from(stats.dropped);
    }
    rows.push(summarize("drl", &drl_slowdowns, &drl_rewards, drl_dropped));

    for (scheduler_id, kind) in HeuristicKind::ALL.into_iter().enumerate() {
        let mut slowdowns = Vec::new();
        let mut rewards = Vec::new();
        let mut dropped = 0u64;
        for (jobset_index, jobset) in jobsets.iter().enumerate() {
            let mut rng = rngstream::derive(
                seed,
                StreamKind::Comparison,
                scheduler_id as u64,
                jobset_index as u64,
                0,
            );
            let summary = run_heuristic_episode(&config.env, jobset, kind, &mut rng)?;
            if let Some(mean) = summary.mean_slowdown {
                slowdowns.push(mean);
            }
            rewards.push(summary.total_reward);
            dropped += u64::from(summary.stats.dropped);
        }
        rows.push(summarize(kind.name(), &slowdowns, &rewards, dropped));
    }

    Ok(ComparisonTable { rows, num_jobsets })
}

/// Debug export: drive one evaluation episode and write one
/// `t action reward done` line per decision.
pub fn write_episode_trace(
    config: &ExperimentConfig,
    checkpoint: &Path,
    seed: u64,
    path: &Path,
) -> Result<(), HarnessError> {
    let params = policy::load_params_expecting(checkpoint, &config.net)?;
    let jobset = &eval_jobsets(config, seed, 1)?[0];
    let mut rng = rngstream::derive(seed, StreamKind::Evaluation, 0, 0, 0);
    let (mut env, mut obs) = Env::reset(config.env.clone(), jobset)?;
    let mut out = String::new();
    let mut decisions = 0usize;
    while !env.done() && decisions < config.train.max_episode_length {
        let t = env.state().clock;
        let trace = crate::policy::forward(&obs, &params).map_err(TrainError::from)?;
        let action = crate::policy::sample_action(&trace.probs, &mut rng);
        let result = env.apply_action(Action(action)).map_err(TrainError::from)?;
        out.push_str(&format!("{} {} {} {}\n", t, action, result.reward, result.done));
        obs = result.observation;
        decisions += 1;
    }
    fs::write(path, out).map_err(io_err(path))
}
