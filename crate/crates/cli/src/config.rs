//! Run configuration: TOML file, `--set` overrides and field validation.
//!
//! Precedence is flag > file > default. Every field has a default, so an
//! empty file is a valid configuration.

use std::fs;
use std::path::{Path, PathBuf};

use cgpo::diffenv::{make_env, DiffEnv, EnvKind, StartDistribution};
use cgpo::harness::{AblationConfig, Direction};
use cgpo::trainer::{Algorithm, ModelConfig, RadiusController, TdLambdaConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    /// Training iterations.
    pub epochs: usize,
    pub num_envs: usize,
    /// Episode length `T`.
    pub episode_length: usize,
    /// Short horizon `h`.
    pub horizon: usize,
    pub delta_init: f64,
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub adaptive_radius: bool,
    pub critic_lr: f64,
    pub critic_epochs: usize,
    pub critic_minibatch: usize,
    pub td_lambda: f64,
    /// Discount of the advantage-based estimate in the ablations.
    pub gamma: f64,
    /// Exploration noise of stochastic rollouts in the ablations.
    pub sigma: f64,
    /// Cost limit `b`; the environment default when absent.
    pub cost_limit: Option<f64>,
    /// Start distribution; the environment default when absent.
    pub start: Option<StartDistribution<f64>>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub primal_lr: f64,
    pub dual_lr: Option<f64>,
    pub model_hidden: Vec<usize>,
    pub model_lr: f64,
    pub model_epochs: usize,
    pub model_minibatch: usize,
    pub model_capacity: usize,
    pub monitor_bounds: bool,
    /// Write checkpoints every this many iterations (and after the last).
    pub checkpoint_every: usize,
    /// Episodes of the final evaluation and of the radius study.
    pub eval_episodes: usize,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::<f64>::new(Algorithm::Cgpo, 0);
        Self {
            env: EnvKind::Function,
            algorithm: Algorithm::Cgpo,
            epochs: 100,
            num_envs: train.num_envs,
            episode_length: 100,
            horizon: train.short_horizon,
            delta_init: train.radius.delta_hat,
            delta_lower: train.radius.delta_lower,
            delta_upper: train.radius.delta_upper,
            beta1: train.radius.beta1,
            beta2: train.radius.beta2,
            eta1: train.radius.eta1,
            eta2: train.radius.eta2,
            adaptive_radius: true,
            critic_lr: train.td.critic_lr,
            critic_epochs: train.td.critic_epochs,
            critic_minibatch: train.td.minibatch,
            td_lambda: train.td.td_lambda,
            gamma: 0.99,
            sigma: 0.1,
            cost_limit: None,
            start: None,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            policy_hidden: train.policy_hidden,
            critic_hidden: train.critic_hidden,
            primal_lr: train.primal_lr,
            dual_lr: None,
            model_hidden: train.model.hidden,
            model_lr: train.model.lr,
            model_epochs: train.model.epochs,
            model_minibatch: train.model.minibatch,
            model_capacity: train.model.capacity,
            monitor_bounds: false,
            checkpoint_every: 10,
            eval_episodes: 10,
            ablation: AblationSection::default(),
        }
    }
}

/// Settings only the ablation studies read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub stages: Vec<f64>,
    pub repetitions: usize,
    pub step_norm: f64,
    pub direction: Direction,
    pub traj_lengths: Vec<usize>,
    pub gradient_stage: f64,
    pub delta_hats: Vec<f64>,
    /// Defaults to five consecutive seeds starting at the run seed.
    pub seeds: Option<Vec<u64>>,
    pub num_envs: usize,
    pub zobg_baseline: bool,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_lr: f64,
    pub critic_epochs: usize,
    pub critic_minibatch: usize,
    /// CGPO iterations that produce the stage policies.
    pub train_iterations: usize,
    pub allow_training: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        let a = AblationConfig::<f64>::default();
        Self {
            stages: a.stages,
            repetitions: a.repetitions,
            step_norm: a.step_norm,
            direction: a.direction,
            traj_lengths: a.traj_lengths,
            gradient_stage: a.gradient_stage,
            delta_hats: a.delta_hats,
            seeds: None,
            num_envs: a.num_envs,
            zobg_baseline: a.zobg_baseline,
            policy_hidden: a.policy_hidden,
            critic_hidden: a.critic_hidden,
            critic_lr: a.critic.critic_lr,
            critic_epochs: a.critic.critic_epochs,
            critic_minibatch: a.critic.minibatch,
            train_iterations: a.train_iterations,
            allow_training: a.allow_training,
        }
    }
}

/// Sets `value` at a dotted `key` path, creating tables on the way.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::config(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn parse_override(arg: &str) -> Result<(String, toml::Value)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| CliError::config(arg, "override must look like key=value"))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Dotted key of the `key = value` line containing byte `pos`.
fn key_at(doc: &str, pos: usize) -> Option<String> {
    let line_start = doc[..pos.min(doc.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = doc[line_start..].lines().next()?;
    let key = line.split_once('=')?.0.trim();
    let section = doc[..line_start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')));
    Some(match section {
        Some(sec) => format!("{sec}.{key}"),
        None => key.to_string(),
    })
}

impl RunConfig {
    /// Default ← file ← overrides (in order), then validation.
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config("config", format!("{}: {}", path.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let doc = table.to_string();
        toml::from_str(&doc).map_err(|e| {
            let field = e
                .span()
                .and_then(|span| key_at(&doc, span.start))
                .or_else(|| e.message().split('`').nth(1).map(str::to_string))
                .unwrap_or_else(|| "config".to_string());
            CliError::config(field, e.message().trim())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn make_env(&self) -> Result<Box<dyn DiffEnv<f64>>> {
        Ok(make_env(self.env, Some(self.episode_length), self.cost_limit, self.start.clone())?)
    }

    pub fn train_config(&self) -> Result<TrainConfig<f64>> {
        let mut radius = RadiusController::new(self.delta_init, self.delta_lower, self.delta_upper)?;
        radius.beta1 = self.beta1;
        radius.beta2 = self.beta2;
        radius.eta1 = self.eta1;
        radius.eta2 = self.eta2;
        radius.validate()?;
        Ok(TrainConfig {
            algorithm: self.algorithm,
            num_envs: self.num_envs,
            short_horizon: self.horizon,
            radius,
            adaptive_radius: self.adaptive_radius,
            td: TdLambdaConfig {
                td_lambda: self.td_lambda,
                critic_lr: self.critic_lr,
                critic_epochs: self.critic_epochs,
                minibatch: self.critic_minibatch,
            },
            policy_hidden: self.policy_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            primal_lr: self.primal_lr,
            dual_lr: self.dual_lr,
            model: ModelConfig {
                hidden: self.model_hidden.clone(),
                lr: self.model_lr,
                epochs: self.model_epochs,
                minibatch: self.model_minibatch,
                capacity: self.model_capacity,
            },
            monitor_bounds: self.monitor_bounds,
            seed: self.seed,
        })
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        self.ablation
            .seeds
            .clone()
            .unwrap_or_else(|| (0..5).map(|i| self.seed.wrapping_add(i)).collect())
    }

    pub fn ablation_config(&self) -> Result<AblationConfig<f64>> {
        let env = self.make_env()?;
        let a = &self.ablation;
        let cfg = AblationConfig {
            env: self.env,
            horizon: self.episode_length,
            cost_limit: env.spec().cost_limit,
            start: self.start.clone().unwrap_or_default(),
            stages: a.stages.clone(),
            repetitions: a.repetitions,
            step_norm: a.step_norm,
            direction: a.direction,
            traj_lengths: a.traj_lengths.clone(),
            gradient_stage: a.gradient_stage,
            delta_hats: a.delta_hats.clone(),
            seeds: self.ablation_seeds(),
            num_envs: a.num_envs,
            sigma: self.sigma,
            gamma: self.gamma,
            zobg_baseline: a.zobg_baseline,
            policy_hidden: a.policy_hidden.clone(),
            critic_hidden: a.critic_hidden.clone(),
            critic: TdLambdaConfig {
                td_lambda: 1.0,
                critic_lr: a.critic_lr,
                critic_epochs: a.critic_epochs,
                minibatch: a.critic_minibatch,
            },
            train_iterations: a.train_iterations,
            allow_training: a.allow_training,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CliError::config("epochs", "must be >= 1"));
        }
        if self.episode_length == 0 {
            return Err(CliError::config("episode_length", "must be >= 1"));
        }
        if self.horizon > self.episode_length {
            return Err(CliError::config(
                "horizon",
                format!("h = {} exceeds episode_length T = {}", self.horizon, self.episode_length),
            ));
        }
        if !(self.delta_lower <= self.delta_init && self.delta_init <= self.delta_upper) {
            return Err(CliError::config("delta_init", "bounds must satisfy delta_lower <= delta_init <= delta_upper"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CliError::config("gamma", "must lie in (0, 1)"));
        }
        if !(self.sigma > 0.0) {
            return Err(CliError::config("sigma", "must be > 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(CliError::config("checkpoint_every", "must be >= 1"));
        }
        if self.eval_episodes == 0 {
            return Err(CliError::config("eval_episodes", "must be >= 1"));
        }
        let env = self.make_env()?;
        self.train_config()?.validate(env.as_ref())?;
        Ok(())
    }
}
