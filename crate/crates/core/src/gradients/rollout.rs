use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Batch, Trajectory};
use crate::diffenv::DiffEnv;
use crate::error::{CgpoError, Result};
use crate::linalg::all_finite;
use crate::nets::Policy;
use crate::seeding::{rng_from, split_seed, NOISE, TRAJECTORY};
use crate::Scalar;

/// Runs one episode; `noise` is `(sigma, seed)` for the Gaussian wrapper.
fn episode<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    start: Vec<S>,
    horizon: usize,
    seed: u64,
    noise: Option<(S, u64)>,
) -> Result<Trajectory<S>> {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon);
    let mut xis = noise.map(|_| Vec::with_capacity(horizon));
    let mut rng = noise.map(|(_, s)| rng_from(s));
    if !all_finite(&start) {
        return Err(CgpoError::NonFinite {
            what: "rollout state",
            step: 0,
        });
    }
    states.push(start);
    for t in 0..horizon {
        let s = &states[t];
        let mut a = policy.act(s)?;
        if let (Some((sigma, _)), Some(rng), Some(xis)) = (noise, rng.as_mut(), xis.as_mut()) {
            let xi: Vec<S> = (0..a.len())
                .map(|_| S::lit(StandardNormal.sample(rng)))
                .collect();
            for (ai, &x) in a.iter_mut().zip(&xi) {
                *ai += sigma * x;
            }
            xis.push(xi);
        }
        let step = env.step(s, &a).map_err(|e| match e {
            CgpoError::InvalidState(_) => CgpoError::NonFinite {
                what: "rollout state",
                step: t,
            },
            other => other,
        })?;
        if !all_finite(&step.next_state) || !step.reward.is_finite() || !step.cost.is_finite() {
            return Err(CgpoError::NonFinite {
                what: "rollout state",
                step: t + 1,
            });
        }
        actions.push(a);
        rewards.push(step.reward);
        costs.push(step.cost);
        states.push(step.next_state);
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        costs,
        seed,
        noise: xis,
    })
}

/// `n` deterministic episodes; trajectory `i` starts from
/// `env.reset(split_seed(seed, TRAJECTORY, i))`.
pub fn rollout<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Batch<S>> {
    check_n(n)?;
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let ts = split_seed(seed, TRAJECTORY, i);
            episode(env, policy, env.reset(ts), horizon, ts, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::new(trajectories))
}

/// Deterministic episodes from the given start states.
pub fn rollout_from<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    starts: &[Vec<S>],
    horizon: usize,
) -> Result<Batch<S>> {
    check_n(starts.len())?;
    let trajectories = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| episode(env, policy, s.clone(), horizon, i as u64, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::new(trajectories))
}

/// Episodes under the Gaussian wrapper `a = π(s) + σ·ξ`. Start states come
/// from `starts` when given, otherwise from `env.reset` as in [`rollout`].
pub fn rollout_noisy<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    n: usize,
    horizon: usize,
    sigma: S,
    seed: u64,
    starts: Option<&[Vec<S>]>,
) -> Result<Batch<S>> {
    check_n(n)?;
    if !(sigma > S::zero()) {
        return Err(CgpoError::config("sigma", "must be > 0"));
    }
    if let Some(st) = starts {
        if st.len() != n {
            return Err(CgpoError::DimensionMismatch {
                what: "start states",
                expected: n,
                got: st.len(),
            });
        }
    }
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let ts = split_seed(seed, TRAJECTORY, i);
            let start = match starts {
                Some(st) => st[i as usize].clone(),
                None => env.reset(ts),
            };
            episode(env, policy, start, horizon, ts, Some((sigma, split_seed(ts, NOISE, 0))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::new(trajectories))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(CgpoError::config("num_envs", "need at least one trajectory"));
    }
    Ok(())
}
