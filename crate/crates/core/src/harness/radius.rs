use serde::{Deserialize, Serialize};

use super::metrics::{conv_steps, vio_ratio, CurvePoint, MetricsConfig};
use crate::diffenv::DiffEnv;
use crate::error::Result;
use crate::seeding::{split_seed, EVAL_ROLLOUT, FINAL_EVAL};
use crate::trainer::{evaluate, TrainConfig, Trainer};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RadiusRow<S> {
    pub seed: u64,
    /// `fixed` or `adaptive`.
    pub mode: String,
    pub final_return: S,
    pub final_cost: S,
    /// `|J_C − b|` of the final policy.
    pub gap: S,
    pub final_delta_hat: S,
    pub vio_percent: Option<S>,
    pub critical_updates: usize,
    pub conv_steps: Option<usize>,
    pub config_hash: String,
}

/// Paired runs per seed: the radius frozen at `base.radius.delta_hat` and
/// the adaptive rule from the same starting radius.
pub fn ablate_radius<S: Scalar>(
    make: &dyn Fn() -> Result<Box<dyn DiffEnv<S>>>,
    base: &TrainConfig<S>,
    iterations: usize,
    seeds: &[u64],
    eval_episodes: usize,
    metrics: &MetricsConfig<S>,
) -> Result<Vec<RadiusRow<S>>> {
    metrics.validate()?;
    let hash = super::config_hash(&(base, iterations, seeds, eval_episodes, metrics))?;
    let mut rows = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        for (mode, adaptive) in [("fixed", false), ("adaptive", true)] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.adaptive_radius = adaptive;
            let mut trainer = Trainer::new(make()?, cfg)?;
            let records = trainer.run(iterations, |_, _| Ok(()))?;
            let env = trainer.env.as_ref();
            let b = env.spec().cost_limit;
            let summary = evaluate(env, &trainer.state.policy, eval_episodes, split_seed(seed, EVAL_ROLLOUT, FINAL_EVAL))?;
            let history: Vec<(S, S)> = records.iter().map(|r| (r.j_c, r.b)).collect();
            let curve: Vec<CurvePoint<S>> = records
                .iter()
                .map(|r| CurvePoint {
                    env_steps: r.env_steps,
                    ret: r.j_r,
                    cost: r.j_c,
                })
                .collect();
            let vio = vio_ratio(&history, metrics);
            rows.push(RadiusRow {
                seed,
                mode: mode.to_string(),
                final_return: summary.mean_return,
                final_cost: summary.mean_cost,
                gap: (summary.mean_cost - b).abs(),
                final_delta_hat: trainer.state.radius.delta_hat,
                vio_percent: vio.map(|v| v.percent),
                critical_updates: vio.map_or(0, |v| v.critical),
                conv_steps: conv_steps(&curve, b, metrics),
                config_hash: hash.clone(),
            });
        }
    }
    Ok(rows)
}
