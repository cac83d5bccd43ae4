use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AblationConfig, CellStats, Estimator, StageSource};
use crate::diffenv::make_env;
use crate::error::{CgpoError, Result};
use crate::gradients::{bptt_grads, relative_error, rollout_from, zobg_grads};
use crate::linalg::{add, dot, norm, scaled};
use crate::seeding::{split_seed, ABLATION, NOISE};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct GradientRow<S> {
    pub traj_len: usize,
    pub delta_hat: S,
    pub estimator: String,
    pub mean: S,
    pub std: S,
    pub samples: usize,
    pub excluded: usize,
    pub config_hash: String,
}

/// For each trajectory length and each estimator X, steps `δ = −√δ̂·q̂_X`
/// from the policy at `gradient_stage` and scores `J_C(θ) + q_Xᵀδ` against
/// the measured `J_C(θ + δ)`. Repetitions differ in their start states and
/// exploration noise.
///
/// An episode of length `len + 1` is used so that `len` actions influence
/// the cumulative cost (costs are charged on the pre-transition state).
pub fn ablate_gradient<S: Scalar>(cfg: &AblationConfig<S>, source: StageSource<S>) -> Result<Vec<GradientRow<S>>> {
    cfg.validate()?;
    let hash = super::config_hash(cfg)?;
    let policy = source
        .resolve(cfg, &[cfg.gradient_stage])?
        .pop()
        .expect("one stage requested");
    let base = cfg.seeds[0];
    let mut rows = Vec::new();
    for &len in &cfg.traj_lengths {
        let horizon = len + 1;
        let env = make_env(cfg.env, Some(horizon), Some(cfg.cost_limit), Some(cfg.start.clone()))?;
        if !env.spec().differentiable {
            return Err(CgpoError::config("env", "the gradient study needs a differentiable environment"));
        }
        // errs[rep][dh][estimator]
        let errs = (0..cfg.repetitions)
            .into_par_iter()
            .map(|r| -> Result<Vec<[Option<S>; 2]>> {
                let seed = split_seed(base, ABLATION, (len * cfg.repetitions + r) as u64);
                let starts: Vec<Vec<S>> = (0..cfg.num_envs as u64).map(|i| env.reset(split_seed(seed, ABLATION, i))).collect();
                let batch = rollout_from(env.as_ref(), &policy, &starts, horizon)?;
                let j0 = batch.mean_cost();
                let q_f = bptt_grads(env.as_ref(), &batch, &policy)?.q;
                let q_z = zobg_grads(
                    env.as_ref(),
                    &policy,
                    cfg.num_envs,
                    horizon,
                    cfg.sigma,
                    cfg.zobg_baseline,
                    split_seed(seed, NOISE, 0),
                    Some(&starts),
                )?
                .q;
                cfg.delta_hats
                    .iter()
                    .map(|&dh| {
                        let mut cell = [None, None];
                        for (slot, q) in cell.iter_mut().zip([&q_f, &q_z]) {
                            let qn = norm(q);
                            if !(qn > S::zero()) {
                                continue;
                            }
                            let delta = scaled(-dh.sqrt() / qn, q);
                            let moved = policy.with_params(add(policy.params(), &delta))?;
                            let j1 = rollout_from(env.as_ref(), &moved, &starts, horizon)?.mean_cost();
                            *slot = relative_error(j1, j0 + dot(q, &delta), j0);
                        }
                        Ok(cell)
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        for (di, &dh) in cfg.delta_hats.iter().enumerate() {
            for (ei, est) in [Estimator::Fobg, Estimator::Zobg].into_iter().enumerate() {
                let vals: Vec<Option<S>> = errs.iter().map(|e| e[di][ei]).collect();
                let st = CellStats::from_samples(&vals);
                rows.push(GradientRow {
                    traj_len: len,
                    delta_hat: dh,
                    estimator: est.to_string(),
                    mean: st.mean,
                    std: st.std,
                    samples: st.samples,
                    excluded: st.excluded,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(rows)
}
