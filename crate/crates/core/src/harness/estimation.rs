use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AblationConfig, CellStats, Direction, Estimator};
use crate::diffenv::{make_env, DiffEnv};
use crate::error::{CgpoError, Result};
use crate::gradients::{abe_predict, bptt_grads, fit_discounted_critic, gbe_predict, relative_error, rollout, rollout_from, rollout_noisy};
use crate::linalg::{add, norm, scaled};
use crate::nets::{Critic, Policy};
use crate::seeding::{rng_from, split_seed, ABLATION, CRITIC_INIT, CRITIC_SHUFFLE, NOISE};
use crate::subproblem::{solve_step, SubproblemInput};
use crate::trainer::{Algorithm, TrainConfig, Trainer};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EstimationRow<S> {
    pub stage: S,
    pub estimator: String,
    pub mean: S,
    pub std: S,
    pub samples: usize,
    pub excluded: usize,
    pub config_hash: String,
}

/// Where the probed policies come from.
pub enum StageSource<S: Scalar> {
    /// Train CGPO and snapshot at the configured fractions.
    Train,
    /// One policy per configured stage, e.g. loaded from checkpoints.
    Provided(Vec<Policy<S>>),
}

impl<S: Scalar> StageSource<S> {
    /// The policies for `stages`, training them when allowed.
    pub fn resolve(self, cfg: &AblationConfig<S>, stages: &[S]) -> Result<Vec<Policy<S>>> {
        match self {
            StageSource::Provided(p) if p.len() == stages.len() => Ok(p),
            StageSource::Provided(p) => Err(CgpoError::config(
                "stage_checkpoints",
                format!("{} stage policies for {} stages", p.len(), stages.len()),
            )),
            StageSource::Train if cfg.allow_training => {
                let env = make_env(cfg.env, Some(cfg.horizon), Some(cfg.cost_limit), Some(cfg.start.clone()))?;
                stage_policies(env, cfg, stages)
            }
            StageSource::Train => Err(CgpoError::config(
                "stage_checkpoints",
                "none given and training is disabled",
            )),
        }
    }
}

/// Runs CGPO for `train_iterations` and returns the policy in force at
/// iteration `round(f · iterations)` for every fraction `f` in `stages`.
pub fn stage_policies<S: Scalar>(env: Box<dyn DiffEnv<S>>, cfg: &AblationConfig<S>, stages: &[S]) -> Result<Vec<Policy<S>>> {
    let mut tc = TrainConfig::new(Algorithm::Cgpo, cfg.seeds[0]);
    tc.num_envs = cfg.num_envs;
    tc.short_horizon = env.spec().horizon;
    tc.policy_hidden = cfg.policy_hidden.clone();
    tc.critic_hidden = cfg.critic_hidden.clone();
    let mut trainer = Trainer::new(env, tc)?;
    let marks: Vec<usize> = stages
        .iter()
        .map(|&f| (f.to_f64_lossy() * cfg.train_iterations as f64).round() as usize)
        .collect();
    let mut out = vec![None; marks.len()];
    let last = marks.iter().copied().max().unwrap_or(0);
    for k in 0..=last {
        for (slot, &m) in out.iter_mut().zip(&marks) {
            if m == k {
                *slot = Some(trainer.state.policy.clone());
            }
        }
        if k < last {
            trainer.step()?;
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every mark visited")).collect())
}

struct Sample<S> {
    gbe: Option<S>,
    abe: Option<S>,
}

fn probe_direction<S: Scalar>(cfg: &AblationConfig<S>, g: &[S], q: &[S], c: S, seed: u64) -> Result<Vec<S>> {
    let dir = match cfg.direction {
        Direction::Solver => {
            let dh = cfg.step_norm * cfg.step_norm;
            let sol = solve_step(&SubproblemInput::new(g.to_vec(), q.to_vec(), c, dh))?;
            if norm(&sol.delta) > S::zero() {
                sol.delta
            } else {
                scaled(-S::one(), q)
            }
        }
        Direction::Sphere => {
            let mut rng = rng_from(seed);
            (0..g.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    S::lit(z)
                })
                .collect()
        }
    };
    let n = norm(&dir);
    if !(n > S::zero()) {
        return Err(CgpoError::Precondition("probe direction vanished".into()));
    }
    Ok(scaled(cfg.step_norm / n, &dir))
}

fn one_sample<S: Scalar>(env: &dyn DiffEnv<S>, policy: &Policy<S>, cfg: &AblationConfig<S>, seed: u64) -> Result<Sample<S>> {
    let spec = env.spec();
    let horizon = spec.horizon;
    let batch = rollout(env, policy, cfg.num_envs, horizon, seed)?;
    let gp = bptt_grads(env, &batch, policy)?;
    let delta = probe_direction(cfg, &gp.g, &gp.q, gp.c, split_seed(seed, ABLATION, 1))?;
    let moved = policy.with_params(add(policy.params(), &delta))?;
    let starts = batch.start_states();
    let j_old = batch.mean_cost();
    let j_new = rollout_from(env, &moved, &starts, horizon)?.mean_cost();

    let gbe = gbe_predict(j_old, &gp.q, &delta)?;

    let noisy = rollout_noisy(env, policy, cfg.num_envs, horizon, cfg.sigma, split_seed(seed, NOISE, 1), Some(&starts))?;
    let critic0 = Critic::new(spec.state_dim, horizon, cfg.critic_hidden.clone(), split_seed(seed, CRITIC_INIT, 0))?;
    let critic = fit_discounted_critic(&noisy, &critic0, cfg.gamma, &cfg.critic, split_seed(seed, CRITIC_SHUFFLE, 0))?;
    let abe = abe_predict(&noisy, policy, &moved, cfg.gamma, cfg.sigma, &critic, j_old)?;

    Ok(Sample {
        gbe: relative_error(j_new, gbe, j_old),
        abe: relative_error(j_new, abe, j_old),
    })
}

/// Relative error of the first-order and advantage-based predictions of
/// `J_C(θ + δ)` with `‖δ‖` fixed, at each training stage.
pub fn ablate_estimation<S: Scalar>(cfg: &AblationConfig<S>, source: StageSource<S>) -> Result<Vec<EstimationRow<S>>> {
    cfg.validate()?;
    let hash = super::config_hash(cfg)?;
    let env = make_env(cfg.env, Some(cfg.horizon), Some(cfg.cost_limit), Some(cfg.start.clone()))?;
    if !env.spec().differentiable {
        return Err(CgpoError::config("env", "the estimation study needs a differentiable environment"));
    }
    let policies = source.resolve(cfg, &cfg.stages)?;
    let base = cfg.seeds[0];
    let mut rows = Vec::with_capacity(2 * policies.len());
    for (si, (policy, &stage)) in policies.iter().zip(&cfg.stages).enumerate() {
        let samples = (0..cfg.repetitions)
            .into_par_iter()
            .map(|r| one_sample(env.as_ref(), policy, cfg, split_seed(base, ABLATION, (si * cfg.repetitions + r) as u64)))
            .collect::<Result<Vec<_>>>()?;
        for (est, vals) in [
            (Estimator::Gbe, samples.iter().map(|s| s.gbe).collect::<Vec<_>>()),
            (Estimator::Abe, samples.iter().map(|s| s.abe).collect()),
        ] {
            let st = CellStats::from_samples(&vals);
            rows.push(EstimationRow {
                stage,
                estimator: est.to_string(),
                mean: st.mean,
                std: st.std,
                samples: st.samples,
                excluded: st.excluded,
                config_hash: hash.clone(),
            });
        }
    }
    Ok(rows)
}
