//! Command-line front end: generate workloads, train the scheduler, evaluate
//! a checkpoint, and compare it against the heuristic baselines.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use rlsched_core::config::{load_config, ExperimentConfig};
use rlsched_core::harness;

#[derive(Parser)]
#[command(name = "rlsched", version, about = "Cluster job scheduling with a policy-gradient scheduler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (flat `section.key = value` text).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.workload.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write jobset files for the configured workload.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
        /// How many jobset files to write.
        #[arg(long, default_value_t = 10)]
        num_jobsets: usize,
    },
    /// Train the policy; writes metrics.csv, checkpoints, and a final report.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Override train.num_iterations from the config.
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on freshly generated held-out jobsets.
    Evaluate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        num_jobsets: usize,
        /// Also write a `t action reward done` trace of one episode here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare the checkpointed policy against SJF, packer, and random.
    Compare {
        #[command(flatten)]
        common: ConfigArgs,
        /// Policy checkpoint to compare.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        num_jobsets: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common, num_jobsets } => {
            let cfg = common.load()?;
            let out_dir = cfg.output_dir.clone();
            let paths = harness::run_generate(&cfg, cfg.train.seed, num_jobsets, &out_dir)?;
            println!("wrote {} jobset files under {}", paths.len(), out_dir.display());
        }
        Command::Train { common, iterations, resume } => {
            let mut cfg = common.load()?;
            if let Some(n) = iterations {
                cfg.train.num_iterations = n;
            }
            let outcome = harness::run_training(&cfg, resume, |report| {
                println!(
                    "iter {:>4}  reward {:>10.3}  slowdown {:>7.3}  len {:>6.1}  {:.2}s",
                    report.iteration + 1,
                    report.mean_total_reward,
                    report.mean_slowdown,
                    report.mean_episode_length,
                    report.wall_time
                );
            })?;
            println!("metrics: {}", outcome.metrics_path.display());
            println!("checkpoint: {}", outcome.final_checkpoint.display());
            let eval = &outcome.final_eval;
            match eval.mean_slowdown {
                Some(s) => println!(
                    "held-out: mean slowdown {s:.4}, mean reward {:.2}, dropped {}, truncated {}",
                    eval.mean_total_reward, eval.jobs_dropped, eval.truncated_jobs
                ),
                None => println!("held-out: no jobs"),
            }
        }
        Command::Evaluate { common, checkpoint, num_jobsets, trace } => {
            let cfg = common.load()?;
            let summary = harness::run_evaluate(&cfg, &checkpoint, cfg.train.seed, num_jobsets)?;
            match summary.mean_slowdown {
                Some(s) => println!("mean slowdown {s:.4} over {} jobsets", summary.episodes),
                None => println!("no jobs over {} jobsets", summary.episodes),
            }
            println!(
                "mean reward {:.3}, dropped {}, truncated {}",
                summary.mean_total_reward, summary.jobs_dropped, summary.truncated_jobs
            );
            if let Some(trace_path) = trace {
                harness::write_episode_trace(&cfg, &checkpoint, cfg.train.seed, &trace_path)?;
                println!("trace: {}", trace_path.display());
            }
        }
        Command::Compare { common, checkpoint, num_jobsets } => {
            let cfg = common.load()?;
            let table = harness::run_compare(&cfg, &checkpoint, cfg.train.seed, num_jobsets)?;
            print!("{table}");
            std::fs::create_dir_all(&cfg.output_dir)
                .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            let csv_path = cfg.output_dir.join("comparison.csv");
            std::fs::write(&csv_path, table.to_csv())
                .with_context(|| format!("writing {}", csv_path.display()))?;
            println!("table: {}", csv_path.display());
        }
    }
    Ok(())
}
