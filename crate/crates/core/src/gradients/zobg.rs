use rayon::prelude::*;

use super::{rollout_noisy, Batch, GradPair, Trajectory};
use crate::diffenv::DiffEnv;
use crate::error::{CgpoError, Result};
use crate::linalg::axpy;
use crate::nets::Policy;
use crate::Scalar;

/// `Σ_t ∇θ log N(a_t; π_θ(s_t), σ²) = Σ_t (ξ_t/σ)ᵀ ∂π_θ(s_t)/∂θ`.
fn score<S: Scalar>(policy: &Policy<S>, tr: &Trajectory<S>, sigma: S) -> Result<Vec<S>> {
    let xis = tr
        .noise
        .as_ref()
        .ok_or_else(|| CgpoError::Precondition("score needs a trajectory from the Gaussian wrapper".into()))?;
    let mut out = vec![S::zero(); policy.num_params()];
    for (s, xi) in tr.states.iter().zip(xis) {
        let up: Vec<S> = xi.iter().map(|&x| x / sigma).collect();
        let cache = policy.net.forward_cached(s)?;
        policy.net.backward_into(&cache, &up, &mut out)?;
    }
    Ok(out)
}

/// Noisy batch plus per-trajectory score vectors.
pub fn zobg_samples<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    n: usize,
    horizon: usize,
    sigma: S,
    seed: u64,
    starts: Option<&[Vec<S>]>,
) -> Result<(Batch<S>, Vec<Vec<S>>)> {
    let batch = rollout_noisy(env, policy, n, horizon, sigma, seed, starts)?;
    let scores = batch
        .trajectories
        .par_iter()
        .map(|tr| score(policy, tr, sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok((batch, scores))
}

/// Score-function estimate `(1/N) Σ_i score_i · (R_i − b_R)` and likewise
/// for the cost; `b` is the batch mean when `baseline` is set, else zero.
pub fn zobg_grads<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    n: usize,
    horizon: usize,
    sigma: S,
    baseline: bool,
    seed: u64,
    starts: Option<&[Vec<S>]>,
) -> Result<GradPair<S>> {
    if baseline && n < 2 {
        return Err(CgpoError::config("num_envs", "baseline subtraction needs at least 2 trajectories"));
    }
    let (batch, scores) = zobg_samples(env, policy, n, horizon, sigma, seed, starts)?;
    let j_r = batch.mean_reward();
    let j_c = batch.mean_cost();
    let (b_r, b_c) = if baseline { (j_r, j_c) } else { (S::zero(), S::zero()) };
    let mut g = vec![S::zero(); policy.num_params()];
    let mut q = vec![S::zero(); policy.num_params()];
    for (tr, sc) in batch.trajectories.iter().zip(&scores) {
        axpy(tr.total_reward() - b_r, sc, &mut g);
        axpy(tr.total_cost() - b_c, sc, &mut q);
    }
    let nn = S::from_usize_lossy(n);
    g.iter_mut().for_each(|v| *v /= nn);
    q.iter_mut().for_each(|v| *v /= nn);
    Ok(GradPair {
        g,
        q,
        c: j_c - env.spec().cost_limit,
        j_r,
        j_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffenv::{EnvSpec, StepJacobians, StepResult};

    struct ZeroEnv(EnvSpec<f64>);

    impl DiffEnv<f64> for ZeroEnv {
        fn spec(&self) -> &EnvSpec<f64> {
            &self.0
        }
        fn step(&self, s: &[f64], _a: &[f64]) -> Result<StepResult<f64>> {
            Ok(StepResult { next_state: s.to_vec(), reward: 0.0, cost: 0.0 })
        }
        fn jacobians(&self, _s: &[f64], _a: &[f64]) -> Result<StepJacobians<f64>> {
            Ok(StepJacobians::zeros(1, 1))
        }
        fn reset(&self, _seed: u64) -> Vec<f64> {
            vec![0.5]
        }
    }

    #[test]
    fn zero_returns_give_zero_gradient() {
        let env = ZeroEnv(EnvSpec {
            name: "zero".into(),
            state_dim: 1,
            action_dim: 1,
            horizon: 3,
            cost_limit: 0.0,
            action_low: -1.0,
            action_high: 1.0,
            differentiable: true,
        });
        let pol = Policy::new(1, 1, vec![4], -1.0, 1.0, 0).unwrap();
        let gp = zobg_grads(&env, &pol, 5, 3, 0.1, false, 1, None).unwrap();
        assert!(gp.g.iter().chain(&gp.q).all(|&v| v == 0.0));
        assert!(zobg_grads(&env, &pol, 1, 3, 0.1, true, 1, None).is_err());
    }
}
