use rayon::prelude::*;

use super::{Batch, GradPair, Trajectory, Window};
use crate::diffenv::DiffEnv;
use crate::error::{CgpoError, Result};
use crate::linalg::{add, axpy};
use crate::nets::{Critic, Policy};
use crate::Scalar;

/// Reverse sweep over steps `t0..t1` of one trajectory, seeded with the
/// terminal state adjoints. Returns unscaled `(∂/∂θ Σr, ∂/∂θ Σc)`.
///
/// With `λ` the state adjoint and `μ` the action adjoint:
/// `μ_t = ∂r/∂a + λ_{t+1}·∂F/∂a`, `λ_t = ∂r/∂s + λ_{t+1}·∂F/∂s + μ_t·∂π/∂s`,
/// and `μ_t·∂π/∂θ` is accumulated into the parameter gradient.
fn adjoint_sweep<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    tr: &Trajectory<S>,
    (t0, t1): (usize, usize),
    terminal_r: Vec<S>,
    terminal_c: Vec<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    let spec = env.spec();
    let n = policy.num_params();
    let mut grad_r = vec![S::zero(); n];
    let mut grad_c = vec![S::zero(); n];
    let mut lam_r = terminal_r;
    let mut lam_c = terminal_c;
    for t in (t0..t1).rev() {
        let s = &tr.states[t];
        let a = &tr.actions[t];
        let mut jac = env.jacobians(s, a)?;
        if !jac.is_finite() {
            return Err(CgpoError::NonFinite { what: "step Jacobians", step: t });
        }
        // the environment clamps actions; outside the box the action has no effect
        for (j, &aj) in a.iter().enumerate() {
            if aj < spec.action_low || aj > spec.action_high {
                for i in 0..spec.state_dim {
                    jac.df_da.set(i, j, S::zero());
                }
                jac.dr_da[j] = S::zero();
                jac.dc_da[j] = S::zero();
            }
        }
        let mu_r = add(&jac.dr_da, &jac.df_da.left_mul(&lam_r));
        let mu_c = add(&jac.dc_da, &jac.df_da.left_mul(&lam_c));
        let cache = policy.net.forward_cached(s)?;
        let din_r = policy.net.backward_into(&cache, &mu_r, &mut grad_r)?;
        let din_c = policy.net.backward_into(&cache, &mu_c, &mut grad_c)?;
        if t > t0 {
            let mut next_r = jac.df_ds.left_mul(&lam_r);
            axpy(S::one(), &jac.dr_ds, &mut next_r);
            axpy(S::one(), &din_r, &mut next_r);
            let mut next_c = jac.df_ds.left_mul(&lam_c);
            axpy(S::one(), &jac.dc_ds, &mut next_c);
            axpy(S::one(), &din_c, &mut next_c);
            lam_r = next_r;
            lam_c = next_c;
        }
    }
    Ok((grad_r, grad_c))
}

/// Sums per-trajectory gradients in index order and divides by `N`.
fn reduce<S: Scalar>(parts: Vec<(Vec<S>, Vec<S>)>, n_params: usize) -> (Vec<S>, Vec<S>) {
    let mut g = vec![S::zero(); n_params];
    let mut q = vec![S::zero(); n_params];
    let n = S::from_usize_lossy(parts.len());
    for (gi, qi) in &parts {
        axpy(S::one(), gi, &mut g);
        axpy(S::one(), qi, &mut q);
    }
    g.iter_mut().for_each(|v| *v /= n);
    q.iter_mut().for_each(|v| *v /= n);
    (g, q)
}

fn grad_pair<S: Scalar>(env: &dyn DiffEnv<S>, batch: &Batch<S>, g: Vec<S>, q: Vec<S>) -> GradPair<S> {
    let j_c = batch.mean_cost();
    GradPair {
        g,
        q,
        c: j_c - env.spec().cost_limit,
        j_r: batch.mean_reward(),
        j_c,
    }
}

fn check_batch<S: Scalar>(env: &dyn DiffEnv<S>, batch: &Batch<S>) -> Result<()> {
    if batch.is_empty() {
        return Err(CgpoError::Precondition("empty batch".into()));
    }
    if !env.spec().differentiable {
        return Err(CgpoError::NoJacobians(env.spec().name.clone()));
    }
    let horizon = batch.horizon();
    if batch.trajectories.iter().any(|t| t.len() != horizon) {
        return Err(CgpoError::Precondition("trajectories differ in length".into()));
    }
    Ok(())
}

/// Full-horizon trajectory gradients of the mean return and mean cost.
pub fn bptt_grads<S: Scalar>(env: &dyn DiffEnv<S>, batch: &Batch<S>, policy: &Policy<S>) -> Result<GradPair<S>> {
    check_batch(env, batch)?;
    if batch.window != Window::Full {
        return Err(CgpoError::Precondition("bptt_grads needs a full-horizon batch".into()));
    }
    let bounds = (0, batch.horizon());
    let d_s = env.spec().state_dim;
    let parts = batch
        .trajectories
        .par_iter()
        .map(|tr| adjoint_sweep(env, policy, tr, bounds, vec![S::zero(); d_s], vec![S::zero(); d_s]))
        .collect::<Result<Vec<_>>>()?;
    let (g, q) = reduce(parts, policy.num_params());
    Ok(grad_pair(env, batch, g, q))
}

/// Terminal value of a window ending at `t_end`; zero at the episode end.
fn bootstrap_value<S: Scalar>(critic: &Critic<S>, state: &[S], t_end: usize, horizon: usize) -> Result<S> {
    if t_end >= horizon {
        Ok(S::zero())
    } else {
        critic.value(state, t_end)
    }
}

fn bootstrap_grad<S: Scalar>(critic: &Critic<S>, state: &[S], t_end: usize, horizon: usize) -> Result<Vec<S>> {
    if t_end >= horizon {
        Ok(vec![S::zero(); state.len()])
    } else {
        critic.state_grad(state, t_end)
    }
}

/// Gradients of the windowed losses
/// `L_R = (1/N) Σ_i [Σ_{t=t0}^{t0+h-1} r_t + V_R(s_{t0+h}, t0+h)]` and the
/// analogous `L_C`. Nothing flows into `s_{t0}`. `J_R`, `J_C` and `c` are
/// still reported for the full episodes.
pub fn shac_grads<S: Scalar>(
    env: &dyn DiffEnv<S>,
    batch: &Batch<S>,
    policy: &Policy<S>,
    critic_r: &Critic<S>,
    critic_c: &Critic<S>,
) -> Result<GradPair<S>> {
    check_batch(env, batch)?;
    let horizon = batch.horizon();
    let bounds = batch.window.bounds(horizon);
    let parts = batch
        .trajectories
        .par_iter()
        .map(|tr| {
            let s_end = &tr.states[bounds.1];
            let lr = bootstrap_grad(critic_r, s_end, bounds.1, horizon)?;
            let lc = bootstrap_grad(critic_c, s_end, bounds.1, horizon)?;
            adjoint_sweep(env, policy, tr, bounds, lr, lc)
        })
        .collect::<Result<Vec<_>>>()?;
    let (g, q) = reduce(parts, policy.num_params());
    Ok(grad_pair(env, batch, g, q))
}

/// Values of the windowed losses for a policy, re-rolled from fixed window
/// start states at absolute time `t0`. Without critics the tail is dropped.
pub fn window_objective<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    starts: &[Vec<S>],
    t0: usize,
    len: usize,
    critics: Option<(&Critic<S>, &Critic<S>)>,
) -> Result<(S, S)> {
    let horizon = env.spec().horizon;
    let batch = super::rollout_from(env, policy, starts, len)?;
    let n = S::from_usize_lossy(batch.len());
    let mut lr = S::zero();
    let mut lc = S::zero();
    for tr in &batch.trajectories {
        lr += tr.total_reward();
        lc += tr.total_cost();
        if let Some((cr, cc)) = critics {
            lr += bootstrap_value(cr, &tr.states[len], t0 + len, horizon)?;
            lc += bootstrap_value(cc, &tr.states[len], t0 + len, horizon)?;
        }
    }
    Ok((lr / n, lc / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffenv::{FunctionEnv, StartDistribution};
    use crate::gradients::rollout;
    use rand::Rng;

    fn random_policy(seed: u64) -> Policy<f64> {
        let mut p = Policy::new(1, 1, vec![6], -1.0, 1.0, seed).unwrap();
        let mut rng = crate::seeding::rng_from(seed);
        for v in p.params_mut().iter_mut() {
            *v = rng.random_range(-0.7..0.7);
        }
        p
    }

    #[test]
    fn one_step_cost_gradient_is_zero() {
        let env = FunctionEnv::with_params(1, 8.0, StartDistribution::default());
        let pol = random_policy(1);
        let batch = rollout(&env, &pol, 4, 1, 0).unwrap();
        let gp = bptt_grads(&env, &batch, &pol).unwrap();
        assert!(gp.q.iter().all(|&v| v == 0.0));
        assert!(gp.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_gradient_matches_chain_rule() {
        let env = FunctionEnv::with_params(2, 8.0, StartDistribution::default());
        let pol = random_policy(2);
        let batch = rollout(&env, &pol, 1, 2, 5).unwrap();
        let gp = bptt_grads(&env, &batch, &pol).unwrap();
        let tr = &batch.trajectories[0];
        let s1 = tr.states[1][0];
        let chain = crate::diffenv::function_cost_grad(s1) * 0.2;
        let expect = pol.net.backward(&tr.states[0], &[chain]).unwrap().d_params;
        for (a, b) in gp.q.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn window_at_episode_end_ignores_critics() {
        let env = FunctionEnv::with_params(6, 8.0, StartDistribution::default());
        let pol = random_policy(3);
        let mut critic = Critic::new(1, 6, vec![4], 0).unwrap();
        critic.net.params.values.iter_mut().for_each(|v| *v = 0.3);
        let batch = rollout(&env, &pol, 3, 6, 1).unwrap();
        let full = bptt_grads(&env, &batch, &pol).unwrap();
        let win = batch.with_window(Window::Span { start: 0, len: 6 }).unwrap();
        let shac = shac_grads(&env, &win, &pol, &critic, &critic).unwrap();
        assert_eq!(full, shac);
    }
}
