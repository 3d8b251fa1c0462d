//! Experiment configuration files.
//!
//! The format is flat `section.key = value` text: one assignment per line,
//! blank lines and full-line `#` comments allowed, unknown or duplicate keys
//! rejected. Lists are comma-separated (`env.capacity = 10,10`); ranges are
//! `min,max` pairs. Missing keys fall back to defaults. The workload shares
//! the environment's resource count and capacities, and the network geometry
//! is derived from the environment unless given explicitly, in which case it
//! must agree.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::env::EnvConfig;
use crate::policy::NetConfig;
use crate::trainer::TrainConfig;
use crate::workload::WorkloadParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("duplicate config key `{key}` at line {line}")]
    DuplicateKey { key: String, line: usize },
    #[error("inconsistent config: {0}")]
    Inconsistent(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything one experiment needs: environment, workload, network, trainer,
/// and where to put outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub workload: WorkloadParams,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults everywhere: the single-machine geometry.
    pub fn default_single_machine() -> Self {
        let env = EnvConfig::default();
        let workload = WorkloadParams::default();
        let net = NetConfig::for_env(&env);
        ExperimentConfig {
            env,
            workload,
            net,
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/out"),
        }
    }

    /// Re-run all cross-field checks; load_config calls this after parsing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.workload.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.net.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(ConfigError::Invalid)?;

        let inconsistent = |what: String| Err(ConfigError::Inconsistent(what));
        if self.net.input_rows != self.env.lookahead_horizon {
            return inconsistent(format!(
                "net.input_rows = {} but env.lookahead_horizon implies {}",
                self.net.input_rows, self.env.lookahead_horizon
            ));
        }
        if self.net.input_cols != self.env.observation_width() {
            return inconsistent(format!(
                "net.input_cols = {} but the env observation is {} columns wide",
                self.net.input_cols,
                self.env.observation_width()
            ));
        }
        if self.net.num_actions != self.env.action_space_size() {
            return inconsistent(format!(
                "net.num_actions = {} but env.num_machines * env.queue_length + 1 = {}",
                self.net.num_actions,
                self.env.action_space_size()
            ));
        }
        if self.workload.num_resources != self.env.num_resources
            || self.workload.capacity != self.env.capacity
        {
            return inconsistent(
                "workload resources/capacity diverged from env (they are shared)".into(),
            );
        }
        if self.workload.max_duration() as usize > self.env.lookahead_horizon {
            return inconsistent(format!(
                "workload.long_duration_range max {} exceeds env.lookahead_horizon {}",
                self.workload.max_duration(),
                self.env.lookahead_horizon
            ));
        }
        Ok(())
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct KeyMap {
    entries: Vec<(String, Entry)>,
}

impl KeyMap {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.iter_mut().find(|(k, _)| k == key).map(|(_, e)| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn parse<T: FromStr>(&mut self, key: &str, into: &mut T) -> Result<(), ConfigError>
    where
        T::Err: Display,
    {
        if let Some((line, value)) = self.take(key) {
            *into = value
                .parse()
                .map_err(|e| ConfigError::Parse { line, reason: format!("{key}: {e}") })?;
        }
        Ok(())
    }

    fn parse_list<T: FromStr>(&mut self, key: &str, into: &mut Vec<T>) -> Result<(), ConfigError>
    where
        T::Err: Display,
    {
        if let Some((line, value)) = self.take(key) {
            *into = value
                .split(',')
                .map(|tok| tok.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError::Parse { line, reason: format!("{key}: {e}") })?;
        }
        Ok(())
    }

    fn parse_pair<T: FromStr + Copy>(
        &mut self,
        key: &str,
        into: &mut (T, T),
    ) -> Result<(), ConfigError>
    where
        T::Err: Display,
    {
        if let Some((line, value)) = self.take(key) {
            let mut items = Vec::new();
            for tok in value.split(',') {
                items.push(tok.trim().parse::<T>().map_err(|e| ConfigError::Parse {
                    line,
                    reason: format!("{key}: {e}"),
                })?);
            }
            if items.len() != 2 {
                return Err(ConfigError::Parse {
                    line,
                    reason: format!("{key}: expected `min,max`, got `{value}`"),
                });
            }
            *into = (items[0], items[1]);
        }
        Ok(())
    }
}

fn parse_lines(text: &str) -> Result<KeyMap, ConfigError> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            reason: format!("expected `key = value`, got `{trimmed}`"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Parse { line, reason: "empty key".into() });
        }
        if entries.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { key, line });
        }
        entries.push((key, Entry { line, value, used: false }));
    }
    Ok(KeyMap { entries })
}

/// Parse an experiment config from text. See the module docs for the format.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut keys = parse_lines(text)?;
    let mut cfg = ExperimentConfig::default_single_machine();

    if let Some((_, value)) = keys.take("output_dir") {
        cfg.output_dir = PathBuf::from(value);
    }

    keys.parse("env.num_machines", &mut cfg.env.num_machines)?;
    keys.parse("env.num_resources", &mut cfg.env.num_resources)?;
    keys.parse_list("env.capacity", &mut cfg.env.capacity)?;
    keys.parse("env.lookahead_horizon", &mut cfg.env.lookahead_horizon)?;
    keys.parse("env.queue_length", &mut cfg.env.queue_length)?;
    keys.parse("env.backlog_capacity", &mut cfg.env.backlog_capacity)?;
    keys.parse("env.max_episode_length", &mut cfg.env.max_episode_length)?;
    let mut alpha = vec![1.0f64];
    keys.parse_list("env.alpha", &mut alpha)?;
    keys.parse("env.beta", &mut cfg.env.reward_weights.beta)?;
    keys.parse("env.gamma", &mut cfg.env.reward_weights.gamma)?;
    // A single alpha value applies to every machine.
    cfg.env.reward_weights.alpha = if alpha.len() == 1 {
        vec![alpha[0]; cfg.env.num_machines]
    } else {
        alpha
    };

    keys.parse("workload.arrival_rate", &mut cfg.workload.arrival_rate)?;
    keys.parse("workload.short_fraction", &mut cfg.workload.short_fraction)?;
    keys.parse_pair("workload.short_duration_range", &mut cfg.workload.short_duration_range)?;
    keys.parse_pair("workload.long_duration_range", &mut cfg.workload.long_duration_range)?;
    keys.parse_pair("workload.dominant_demand_range", &mut cfg.workload.dominant_demand_range)?;
    keys.parse_pair("workload.other_demand_range", &mut cfg.workload.other_demand_range)?;
    keys.parse("workload.episode_arrival_window", &mut cfg.workload.episode_arrival_window)?;
    cfg.workload.num_resources = cfg.env.num_resources;
    cfg.workload.capacity = cfg.env.capacity.clone();

    keys.parse("net.kernel_size", &mut cfg.net.kernel_size)?;
    keys.parse("net.num_filters", &mut cfg.net.num_filters)?;
    keys.parse("net.learning_rate", &mut cfg.net.learning_rate)?;
    keys.parse("net.rmsprop_decay", &mut cfg.net.rmsprop_decay)?;
    keys.parse("net.rmsprop_epsilon", &mut cfg.net.rmsprop_epsilon)?;
    // Derived unless stated; validate() rejects disagreement.
    cfg.net.input_rows = cfg.env.lookahead_horizon;
    cfg.net.input_cols = cfg.env.observation_width();
    cfg.net.num_actions = cfg.env.action_space_size();
    keys.parse("net.input_rows", &mut cfg.net.input_rows)?;
    keys.parse("net.input_cols", &mut cfg.net.input_cols)?;
    keys.parse("net.num_actions", &mut cfg.net.num_actions)?;

    keys.parse("train.num_iterations", &mut cfg.train.num_iterations)?;
    keys.parse("train.jobsets_per_iteration", &mut cfg.train.jobsets_per_iteration)?;
    keys.parse("train.episodes_per_jobset", &mut cfg.train.episodes_per_jobset)?;
    keys.parse("train.discount", &mut cfg.train.discount)?;
    keys.parse("train.max_episode_length", &mut cfg.train.max_episode_length)?;
    keys.parse("train.eval_every", &mut cfg.train.eval_every)?;
    keys.parse("train.seed", &mut cfg.train.seed)?;
    keys.parse("train.parallel", &mut cfg.train.parallel)?;
    cfg.workload.seed = cfg.train.seed;

    if let Some((key, entry)) = keys.entries.iter().find(|(_, e)| !e.used) {
        return Err(ConfigError::UnknownKey { key: key.clone(), line: entry.line });
    }

    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = "\
# single machine, table geometry
output_dir = runs/single
env.num_machines = 1
env.beta = 2.0
train.seed = 7
";

    const TWO: &str = "\
output_dir = runs/two
env.num_machines = 2
env.alpha = 1.0,1.0
env.beta = 2.0
env.gamma = 1.0
";

    #[test]
    fn single_machine_geometry() {
        let cfg = parse_config(SINGLE).unwrap();
        assert_eq!(cfg.env.num_machines, 1);
        assert_eq!(cfg.env.queue_length, 5);
        assert_eq!(cfg.net.input_rows, 20);
        assert_eq!(cfg.net.input_cols, 124);
        assert_eq!(cfg.net.num_actions, 6);
        assert_eq!(cfg.env.reward_weights.beta, 2.0);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.workload.seed, 7);
    }

    #[test]
    fn two_machine_geometry() {
        let cfg = parse_config(TWO).unwrap();
        assert_eq!(cfg.env.num_machines, 2);
        assert_eq!(cfg.net.num_actions, 11);
        assert_eq!(cfg.net.input_cols, 144);
        assert_eq!(cfg.env.reward_weights.alpha, vec![1.0, 1.0]);
    }

    #[test]
    fn alpha_broadcasts_to_all_machines() {
        let cfg = parse_config("env.num_machines = 2\nenv.alpha = 0.5\n").unwrap();
        assert_eq!(cfg.env.reward_weights.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn wrong_num_actions_is_inconsistent() {
        let err = parse_config("net.num_actions = 7\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Inconsistent(_)), "{msg}");
        assert!(msg.contains("net.num_actions") && msg.contains("7"), "{msg}");
        assert!(msg.contains("6"), "should name the derived value too: {msg}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = parse_config("env.num_machines = 1\nenv.nope = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key, line: 2 } if key == "env.nope"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse_config("env.beta = 1\nenv.beta = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = parse_config("env.num_machines = 1\nwhat is this\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
        let err = parse_config("env.num_machines = one\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn workload_duration_must_fit_horizon() {
        let err = parse_config("workload.long_duration_range = 10,25\n").unwrap_err();
        assert!(matches!(err, ConfigError::Inconsistent(_)), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored()  {
        let cfg = parse_config("\n# hello\n   \nenv.num_machines = 1\n").unwrap();
        assert_eq!(cfg.env.num_machines, 1);
    }
}
