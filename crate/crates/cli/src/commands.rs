//! `train`, `ablate` and `eval`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cgpo::harness::{ablate_estimation, ablate_gradient, ablate_radius, config_hash, write_csv, MetricsConfig, StageSource};
use cgpo::diffenv::make_env;
use cgpo::nets::{Checkpoint, Policy};
use cgpo::seeding::{split_seed, EVAL_ROLLOUT, FINAL_EVAL};
use cgpo::trainer::{evaluate, EvalSummary, TrainState, Trainer};
use cgpo::CgpoError;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::run_dir::{code_version, timestamp, RunDir, RunManifest, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Estimation,
    Gradient,
    Radius,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Estimation => "estimation",
            AblationKind::Gradient => "gradient",
            AblationKind::Radius => "radius",
        }
    }
}

/// Runs `body` inside a fresh run directory and writes the manifest at the
/// end, whether or not the body succeeded.
pub fn with_run_dir(
    command: &str,
    cfg: &RunConfig,
    body: impl FnOnce(&RunDir) -> Result<serde_json::Value>,
) -> Result<(RunDir, serde_json::Value)> {
    // where a run is written does not change what it computes
    let hash = config_hash(&RunConfig {
        out_dir: PathBuf::new(),
        ..cfg.clone()
    })?;
    let dir = RunDir::create(&cfg.out_dir, &hash)?;
    let started_at = timestamp();
    let result = body(&dir);
    let (status, exit_code, error, summary) = match &result {
        Ok(s) => ("completed", 0, None, s.clone()),
        Err(e) => ("failed", e.exit_code(), Some(e.to_string()), serde_json::Value::Null),
    };
    dir.write_manifest(&RunManifest {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        config: cfg.clone(),
        config_hash: hash,
        code_version: code_version(),
        started_at,
        finished_at: timestamp(),
        status: status.to_string(),
        exit_code,
        error,
        summary,
    })?;
    result.map(|s| (dir, s))
}

fn save_checkpoint(dir: &Path, state: &TrainState<f64>) -> cgpo::Result<()> {
    std::fs::create_dir_all(dir)?;
    Checkpoint::new("policy", &state.policy.net).save(&dir.join("policy.json"))?;
    for (name, critic) in [("critic_r", &state.critic_r), ("critic_c", &state.critic_c)] {
        let mut ck = Checkpoint::new(name, &critic.net);
        ck.horizon = Some(critic.horizon);
        ck.save(&dir.join(format!("{name}.json")))?;
    }
    if let Some(m) = &state.model {
        Checkpoint::new("world_model", &m.model.net).save(&dir.join("world_model.json"))?;
    }
    Ok(())
}

fn final_eval(cfg: &RunConfig, policy: &Policy<f64>) -> Result<EvalSummary<f64>> {
    let env = cfg.make_env()?;
    Ok(evaluate(env.as_ref(), policy, cfg.eval_episodes, split_seed(cfg.seed, EVAL_ROLLOUT, FINAL_EVAL))?)
}

pub fn train(cfg: &RunConfig, dir: &RunDir) -> Result<serde_json::Value> {
    let mut trainer = Trainer::new(cfg.make_env()?, cfg.train_config()?)?;
    let mut metrics = BufWriter::new(File::create(dir.metrics())?);
    let ckpt_root = dir.checkpoints();
    let epochs = cfg.epochs;
    let every = cfg.checkpoint_every;
    let records = trainer.run(epochs, |rec, state| {
        if !(rec.j_r.is_finite() && rec.j_c.is_finite()) {
            return Err(CgpoError::NonFinite {
                what: "objective or constraint",
                step: rec.k,
            });
        }
        serde_json::to_writer(&mut metrics, rec)?;
        writeln!(metrics)?;
        metrics.flush()?;
        if state.k % every == 0 || state.k == epochs {
            save_checkpoint(&ckpt_root.join(format!("iter-{:06}", state.k)), state)?;
        }
        Ok(())
    })?;
    let eval = final_eval(cfg, &trainer.state.policy)?;
    let last = records.last().expect("epochs >= 1");
    Ok(json!({
        "iterations": records.len(),
        "env_steps": trainer.state.env_steps,
        "final_delta_hat": last.delta_hat_next,
        "last_batch_return": last.j_r,
        "last_batch_cost": last.j_c,
        "final_checkpoint": format!("checkpoints/iter-{:06}", trainer.state.k),
        "eval": eval,
    }))
}

/// Loads a policy checkpoint; any failure is reported as corrupt.
pub fn load_policy(path: &Path) -> Result<Policy<f64>> {
    let corrupt = |reason: String| CliError::CorruptCheckpoint {
        path: path.display().to_string(),
        reason,
    };
    let ck = Checkpoint::<f64>::load(path).map_err(|e| corrupt(e.to_string()))?;
    if ck.role != "policy" {
        return Err(corrupt(format!("role is `{}`, expected `policy`", ck.role)));
    }
    let net = ck.into_mlp().map_err(|e| corrupt(e.to_string()))?;
    if !net.params.values.iter().all(|v| v.is_finite()) {
        return Err(corrupt("non-finite parameters".into()));
    }
    Ok(Policy { net })
}

fn check_policy_fits(cfg: &RunConfig, policy: &Policy<f64>) -> Result<()> {
    let env = cfg.make_env()?;
    let spec = env.spec();
    let nc = &policy.net.config;
    if nc.input_dim != spec.state_dim || nc.output_dim != spec.action_dim {
        return Err(CliError::config(
            "env",
            format!(
                "checkpoint maps {} -> {} but `{}` has state dim {} and action dim {}",
                nc.input_dim, nc.output_dim, cfg.env, spec.state_dim, spec.action_dim
            ),
        ));
    }
    Ok(())
}

fn csv_summary<T: Serialize>(dir: &RunDir, name: &str, rows: &[T]) -> Result<serde_json::Value> {
    let path = dir.path.join(name);
    write_csv(&path, rows)?;
    Ok(json!({ "table": name, "rows": rows.len() }))
}

pub fn ablate(kind: AblationKind, cfg: &RunConfig, stage_checkpoints: &[PathBuf], dir: &RunDir) -> Result<serde_json::Value> {
    let source = || -> Result<StageSource<f64>> {
        if stage_checkpoints.is_empty() {
            return Ok(StageSource::Train);
        }
        let policies = stage_checkpoints.iter().map(|p| load_policy(p)).collect::<Result<Vec<_>>>()?;
        for p in &policies {
            check_policy_fits(cfg, p)?;
        }
        Ok(StageSource::Provided(policies))
    };
    match kind {
        AblationKind::Estimation => {
            let rows = ablate_estimation(&cfg.ablation_config()?, source()?)?;
            csv_summary(dir, "estimation.csv", &rows)
        }
        AblationKind::Gradient => {
            let rows = ablate_gradient(&cfg.ablation_config()?, source()?)?;
            csv_summary(dir, "gradient.csv", &rows)
        }
        AblationKind::Radius => {
            let make = || make_env(cfg.env, Some(cfg.episode_length), cfg.cost_limit, cfg.start.clone());
            let rows = ablate_radius(
                &make,
                &cfg.train_config()?,
                cfg.epochs,
                &cfg.ablation_seeds(),
                cfg.eval_episodes,
                &MetricsConfig::default(),
            )?;
            csv_summary(dir, "radius.csv", &rows)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub env: String,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: EvalSummary<f64>,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, episodes: usize) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(CliError::config("episodes", "must be >= 1"));
    }
    let policy = load_policy(checkpoint)?;
    check_policy_fits(cfg, &policy)?;
    let env = cfg.make_env()?;
    let summary = evaluate(env.as_ref(), &policy, episodes, split_seed(cfg.seed, EVAL_ROLLOUT, FINAL_EVAL))?;
    Ok(EvalReport {
        checkpoint: checkpoint.display().to_string(),
        env: cfg.env.to_string(),
        seed: cfg.seed,
        summary,
    })
}
