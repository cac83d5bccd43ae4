//! Single updates of each algorithm.

use serde::{Deserialize, Serialize};

use super::critic::{critic_update, episode_samples, Signal};
use super::world_model::{batch_transitions, model_errors, world_model_train, WorldModelEnv};
use super::{compute_ratios, update_radius, Algorithm, IterationRecord, TrainConfig, TrainState};
use crate::diffenv::DiffEnv;
use crate::error::{CgpoError, Result};
use crate::gradients::{bptt_grads, rollout, rollout_from, shac_grads, window_objective, Batch, GradPair, Window};
use crate::linalg::{add, all_finite, axpy, dot, norm, norm2, scaled};
use crate::nets::{Critic, Policy};
use crate::seeding::{split_seed, CRITIC_SHUFFLE, EVAL_ROLLOUT, TRAIN_ROLLOUT};
use crate::subproblem::{solve_step, StepCase, SubproblemInput};
use crate::Scalar;

/// `(g, q)` of the full finite-horizon objectives. With `h < T` the episode
/// is cut into consecutive windows and the critic-bootstrapped window
/// gradients are summed; otherwise the whole episode is differentiated.
pub fn trajectory_grads<S: Scalar>(
    env: &dyn DiffEnv<S>,
    batch: &Batch<S>,
    policy: &Policy<S>,
    critics: (&Critic<S>, &Critic<S>),
    h: usize,
) -> Result<GradPair<S>> {
    let horizon = batch.horizon();
    if h >= horizon {
        return bptt_grads(env, batch, policy);
    }
    let mut out: Option<GradPair<S>> = None;
    let mut start = 0;
    while start < horizon {
        let len = h.min(horizon - start);
        let windowed = batch.clone().with_window(Window::Span { start, len })?;
        let gp = shac_grads(env, &windowed, policy, critics.0, critics.1)?;
        match out.as_mut() {
            None => out = Some(gp),
            Some(acc) => {
                axpy(S::one(), &gp.g, &mut acc.g);
                axpy(S::one(), &gp.q, &mut acc.q);
            }
        }
        start += len;
    }
    Ok(out.expect("horizon >= 1"))
}

/// Outcome of the curvature-bound monitor for one boundary step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BoundCheck<S> {
    pub eps_r: S,
    pub eps_c: S,
    /// `b + ½·ε̂_C·δ̂`
    pub cost_bound: S,
    /// `−½·ε̂_R·δ̂`
    pub return_bound: S,
    /// Measured on the training start states.
    pub j_c_new: S,
    pub j_r_change: S,
    pub cost_ok: bool,
    pub return_ok: bool,
}

/// Curvature of `u ↦ J(θ + u·δ)` at `u = ½` from second differences with
/// steps `2^-1 … 2^-8`, as `2·max|D| / ‖δ‖²` for return and cost. Also
/// returns `J(θ)` and `J(θ + δ)` on the same start states.
pub fn curvature_probe<S: Scalar>(
    env: &dyn DiffEnv<S>,
    policy: &Policy<S>,
    delta: &[S],
    starts: &[Vec<S>],
) -> Result<ProbeResult<S>> {
    let horizon = env.spec().horizon;
    let theta = policy.params().to_vec();
    let phi = |u: S| -> Result<(S, S)> {
        let mut p = theta.clone();
        axpy(u, delta, &mut p);
        window_objective(env, &policy.with_params(p)?, starts, 0, horizon, None)
    };
    let half = S::lit(0.5);
    let mid = phi(half)?;
    let mut max_r = S::zero();
    let mut max_c = S::zero();
    let mut j0 = mid;
    let mut j1 = mid;
    for j in 1..=8 {
        let hh = S::lit(0.5f64.powi(j));
        let lo = phi(half - hh)?;
        let hi = phi(half + hh)?;
        if j == 1 {
            j0 = lo;
            j1 = hi;
        }
        let two = S::lit(2.0);
        max_r = max_r.max(((hi.0 - two * mid.0 + lo.0) / (hh * hh)).abs());
        max_c = max_c.max(((hi.1 - two * mid.1 + lo.1) / (hh * hh)).abs());
    }
    let d2 = norm2(delta);
    let two = S::lit(2.0);
    Ok(ProbeResult {
        eps_r: two * max_r / d2,
        eps_c: two * max_c / d2,
        j_old: j0,
        j_new: j1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult<S> {
    pub eps_r: S,
    pub eps_c: S,
    /// `(J_R, J_C)` before and after the step.
    pub j_old: (S, S),
    pub j_new: (S, S),
}

fn train_batch<S: Scalar>(env: &dyn DiffEnv<S>, state: &TrainState<S>, cfg: &TrainConfig<S>) -> Result<Batch<S>> {
    let spec = env.spec();
    rollout(env, &state.policy, cfg.num_envs, spec.horizon, split_seed(cfg.seed, TRAIN_ROLLOUT, state.k as u64))
}

fn eval_means<S: Scalar>(env: &dyn DiffEnv<S>, policy: &Policy<S>, cfg: &TrainConfig<S>, k: usize) -> Result<(S, S)> {
    let batch = rollout(env, policy, cfg.num_envs, env.spec().horizon, split_seed(cfg.seed, EVAL_ROLLOUT, k as u64))?;
    Ok((batch.mean_reward(), batch.mean_cost()))
}

fn stepped_policy<S: Scalar>(policy: &Policy<S>, delta: &[S], k: usize) -> Result<Policy<S>> {
    let p = add(policy.params(), delta);
    if !all_finite(&p) {
        return Err(CgpoError::NonFinite { what: "policy parameters", step: k });
    }
    policy.with_params(p)
}

/// TD(λ) refits of both critics; only needed for windowed gradients.
fn update_critics<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig<S>,
    batch: &Batch<S>,
    h: usize,
) -> Result<(Option<S>, Option<S>)> {
    if h >= batch.horizon() {
        return Ok((None, None));
    }
    let k = state.k as u64;
    let lam = cfg.td.td_lambda;
    let sr = episode_samples(&batch.trajectories, &state.critic_r, h, lam, Signal::Reward)?;
    let sc = episode_samples(&batch.trajectories, &state.critic_c, h, lam, Signal::Cost)?;
    let (cr, rep_r) = critic_update(&state.critic_r, &sr, &cfg.td, split_seed(cfg.seed, CRITIC_SHUFFLE, 3 * k))?;
    let (cc, rep_c) = critic_update(&state.critic_c, &sc, &cfg.td, split_seed(cfg.seed, CRITIC_SHUFFLE, 3 * k + 1))?;
    state.critic_r = cr;
    state.critic_c = cc;
    Ok((Some(rep_r.final_loss), Some(rep_c.final_loss)))
}

/// Shared tail of the trust-region variants: subproblem, evaluation,
/// ratios, radius, bound monitor and critics.
fn trust_region_update<S: Scalar>(
    state: &mut TrainState<S>,
    env: &dyn DiffEnv<S>,
    cfg: &TrainConfig<S>,
    batch: &Batch<S>,
    gp: GradPair<S>,
    model_holdout_mse: Option<S>,
) -> Result<IterationRecord<S>> {
    let b = env.spec().cost_limit;
    let k = state.k;
    let delta_hat = state.radius.delta_hat;
    let sol = solve_step(&SubproblemInput::new(gp.g.clone(), gp.q.clone(), gp.c, delta_hat))?;
    let new_policy = stepped_policy(&state.policy, &sol.delta, k)?;

    let (er, ec) = eval_means(env, &state.policy, cfg, k)?;
    let (er2, ec2) = eval_means(env, &new_policy, cfg, k)?;
    let pred_r = er + dot(&gp.g, &sol.delta);
    let pred_c = ec + dot(&gp.q, &sol.delta);
    let ratios = compute_ratios(er, er2, pred_r, ec2, pred_c, b);
    let step_norm2 = norm2(&sol.delta);
    // a null step carries no information about the model's accuracy
    let radius_next = if cfg.adaptive_radius && step_norm2 > S::zero() {
        update_radius(ratios, state.radius)
    } else {
        state.radius
    };

    let bound = if cfg.monitor_bounds && sol.case == StepCase::Boundary && gp.c <= S::zero() && step_norm2 > S::zero() {
        let probe = curvature_probe(env, &state.policy, &sol.delta, &batch.start_states())?;
        let half = S::lit(0.5);
        let cost_bound = b + half * probe.eps_c * delta_hat;
        let return_bound = -half * probe.eps_r * delta_hat;
        let j_r_change = probe.j_new.0 - probe.j_old.0;
        Some(BoundCheck {
            eps_r: probe.eps_r,
            eps_c: probe.eps_c,
            cost_bound,
            return_bound,
            j_c_new: probe.j_new.1,
            j_r_change,
            cost_ok: probe.j_new.1 <= cost_bound,
            return_ok: j_r_change >= return_bound,
        })
    } else {
        None
    };

    let (loss_r, loss_c) = update_critics(state, cfg, batch, cfg.short_horizon)?;
    state.policy = new_policy;
    state.radius = radius_next;
    state.env_steps += batch.env_steps();
    state.k += 1;
    Ok(IterationRecord {
        k,
        algorithm: cfg.algorithm,
        j_r: gp.j_r,
        j_c: gp.j_c,
        b,
        case: Some(sol.case.label().to_string()),
        delta_hat,
        delta_hat_next: radius_next.delta_hat,
        rho: ratios.rho,
        zeta: ratios.zeta,
        lambda_star: Some(sol.lambda_star),
        nu_star: Some(sol.nu_star),
        lagrange: state.lagrange,
        step_norm2,
        env_steps: state.env_steps,
        eval_j_r: er,
        eval_j_c: ec,
        eval_j_r_new: er2,
        eval_j_c_new: ec2,
        pred_j_r: pred_r,
        pred_j_c: pred_c,
        bound,
        critic_loss_r: loss_r,
        critic_loss_c: loss_c,
        model_holdout_mse,
    })
}

/// One CGPO update on a differentiable environment.
pub fn cgpo_iteration<S: Scalar>(
    state: &mut TrainState<S>,
    env: &dyn DiffEnv<S>,
    cfg: &TrainConfig<S>,
) -> Result<IterationRecord<S>> {
    let batch = train_batch(env, state, cfg)?;
    let gp = trajectory_grads(env, &batch, &state.policy, (&state.critic_r, &state.critic_c), cfg.short_horizon)?;
    trust_region_update(state, env, cfg, &batch, gp, None)
}

/// One primal-dual step of the Lagrangian baselines. `bptt-lag` always
/// differentiates the whole episode, `shac-lag` uses the short horizon.
pub fn lagrangian_iteration<S: Scalar>(
    state: &mut TrainState<S>,
    env: &dyn DiffEnv<S>,
    cfg: &TrainConfig<S>,
) -> Result<IterationRecord<S>> {
    let spec = env.spec();
    let b = spec.cost_limit;
    let k = state.k;
    let h = match cfg.algorithm {
        Algorithm::BpttLag => spec.horizon,
        _ => cfg.short_horizon,
    };
    let batch = train_batch(env, state, cfg)?;
    let gp = trajectory_grads(env, &batch, &state.policy, (&state.critic_r, &state.critic_c), h)?;
    let lam = state.lagrange;
    let mut dir = gp.g.clone();
    axpy(-lam, &gp.q, &mut dir);
    let delta = scaled(cfg.primal_lr / (norm(&dir) + S::lit(1e-8)), &dir);
    let new_policy = stepped_policy(&state.policy, &delta, k)?;

    let (er, ec) = eval_means(env, &state.policy, cfg, k)?;
    let (er2, ec2) = eval_means(env, &new_policy, cfg, k)?;
    let (loss_r, loss_c) = update_critics(state, cfg, &batch, h)?;

    state.lagrange = (lam + cfg.dual_step(b) * gp.c).max(S::zero());
    state.policy = new_policy;
    state.env_steps += batch.env_steps();
    state.k += 1;
    Ok(IterationRecord {
        k,
        algorithm: cfg.algorithm,
        j_r: gp.j_r,
        j_c: gp.j_c,
        b,
        case: None,
        delta_hat: state.radius.delta_hat,
        delta_hat_next: state.radius.delta_hat,
        rho: None,
        zeta: None,
        lambda_star: None,
        nu_star: None,
        lagrange: state.lagrange,
        step_norm2: norm2(&delta),
        env_steps: state.env_steps,
        eval_j_r: er,
        eval_j_c: ec,
        eval_j_r_new: er2,
        eval_j_c_new: ec2,
        pred_j_r: er + dot(&gp.g, &delta),
        pred_j_c: ec + dot(&gp.q, &delta),
        bound: None,
        critic_loss_r: loss_r,
        critic_loss_c: loss_c,
        model_holdout_mse: None,
    })
}

/// One MB-CGPO update: real data, world-model fit, gradients through the
/// model from the real start states, then the trust-region step. Values
/// (`J`, `c`, evaluation) always come from the real environment.
/// `hard_wired` replaces the learned model when given.
pub fn mb_cgpo_iteration<S: Scalar>(
    state: &mut TrainState<S>,
    env: &dyn DiffEnv<S>,
    hard_wired: Option<&dyn DiffEnv<S>>,
    cfg: &TrainConfig<S>,
) -> Result<IterationRecord<S>> {
    let spec = env.spec();
    let k = state.k as u64;
    let batch = train_batch(env, state, cfg)?;
    let ms = state
        .model
        .as_mut()
        .ok_or_else(|| CgpoError::Precondition("mb-cgpo needs a world model in the train state".into()))?;
    let fresh = batch_transitions(&batch, spec);
    let holdout = model_errors(&ms.model, &fresh)?.map(|e| e.0);
    ms.replay.extend(fresh);
    if cfg.model.epochs > 0 {
        let (model, _) = world_model_train(
            &ms.model,
            ms.replay.as_slice(),
            &[],
            &cfg.model,
            split_seed(cfg.seed, CRITIC_SHUFFLE, 3 * k + 2),
        )?;
        ms.model = model;
    }
    let learned;
    let sim_env: &dyn DiffEnv<S> = match hard_wired {
        Some(m) => m,
        None => {
            learned = WorldModelEnv::new(ms.model.clone(), spec)?;
            &learned
        }
    };
    let sim = rollout_from(sim_env, &state.policy, &batch.start_states(), spec.horizon)?;
    let model_gp = trajectory_grads(sim_env, &sim, &state.policy, (&state.critic_r, &state.critic_c), cfg.short_horizon)?;
    let j_r = batch.mean_reward();
    let j_c = batch.mean_cost();
    let gp = GradPair {
        g: model_gp.g,
        q: model_gp.q,
        c: j_c - spec.cost_limit,
        j_r,
        j_c,
    };
    trust_region_update(state, env, cfg, &batch, gp, holdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffenv::{FunctionEnv, StartDistribution};
    use crate::trainer::RadiusController;

    fn small_cfg(alg: Algorithm) -> TrainConfig<f64> {
        let mut cfg = TrainConfig::new(alg, 5);
        cfg.num_envs = 4;
        cfg.short_horizon = 20;
        cfg.policy_hidden = vec![8];
        cfg.critic_hidden = vec![8];
        cfg.model.hidden = vec![8];
        cfg.model.epochs = 1;
        cfg
    }

    struct ZeroEnv(crate::diffenv::EnvSpec<f64>);

    impl DiffEnv<f64> for ZeroEnv {
        fn spec(&self) -> &crate::diffenv::EnvSpec<f64> {
            &self.0
        }
        fn step(&self, s: &[f64], _a: &[f64]) -> Result<crate::diffenv::StepResult<f64>> {
            Ok(crate::diffenv::StepResult { next_state: s.to_vec(), reward: 0.0, cost: 0.0 })
        }
        fn jacobians(&self, _s: &[f64], _a: &[f64]) -> Result<crate::diffenv::StepJacobians<f64>> {
            Ok(crate::diffenv::StepJacobians::zeros(1, 1))
        }
        fn reset(&self, _seed: u64) -> Vec<f64> {
            vec![0.5]
        }
    }

    #[test]
    fn stationary_policy_takes_null_step() {
        let env = ZeroEnv(crate::diffenv::EnvSpec {
            name: "zero".into(),
            state_dim: 1,
            action_dim: 1,
            horizon: 10,
            cost_limit: 1.0,
            action_low: -1.0,
            action_high: 1.0,
            differentiable: true,
        });
        let mut cfg = small_cfg(Algorithm::Cgpo);
        cfg.short_horizon = 10;
        let mut state = TrainState::init(&env, &cfg).unwrap();
        let before = state.radius;
        let rec = cgpo_iteration(&mut state, &env, &cfg).unwrap();
        assert_eq!(rec.step_norm2, 0.0);
        assert_eq!(rec.case.as_deref(), Some(StepCase::AllFeasible.label()));
        assert_eq!(state.radius, before);
    }

    #[test]
    fn step_respects_radius() {
        let env = FunctionEnv::with_params(30, 2.0, StartDistribution::default());
        let mut cfg = small_cfg(Algorithm::Cgpo);
        cfg.radius = RadiusController::new(1e-2, 1e-4, 1.0).unwrap();
        let mut state = TrainState::init(&env, &cfg).unwrap();
        for _ in 0..3 {
            let dh = state.radius.delta_hat;
            let rec = cgpo_iteration(&mut state, &env, &cfg).unwrap();
            assert!(rec.step_norm2 <= dh * (1.0 + 1e-9));
            assert!(state.radius.delta_hat >= 1e-4 && state.radius.delta_hat <= 1.0);
        }
    }

    #[test]
    fn lagrange_multiplier_follows_gap_sign() {
        let env = FunctionEnv::with_params(20, 1.0, StartDistribution::default());
        let cfg = small_cfg(Algorithm::ShacLag);
        let mut state = TrainState::init(&env, &cfg).unwrap();
        let r1 = lagrangian_iteration(&mut state, &env, &cfg).unwrap();
        assert!(r1.j_c > 1.0);
        assert!(state.lagrange > 0.0);
        let l1 = state.lagrange;
        let r2 = lagrangian_iteration(&mut state, &env, &cfg).unwrap();
        assert!(r2.j_c > 1.0);
        assert!(state.lagrange > l1);
    }

    #[test]
    fn zero_multiplier_ascends_objective() {
        let env = FunctionEnv::with_params(20, 100.0, StartDistribution::default());
        let cfg = small_cfg(Algorithm::BpttLag);
        let mut state = TrainState::init(&env, &cfg).unwrap();
        let batch = train_batch(&env, &state, &cfg).unwrap();
        let gp = bptt_grads(&env, &batch, &state.policy).unwrap();
        let theta = state.policy.params().to_vec();
        lagrangian_iteration(&mut state, &env, &cfg).unwrap();
        let d: Vec<f64> = state.policy.params().iter().zip(&theta).map(|(a, b)| a - b).collect();
        let cos = dot(&d, &gp.g) / (norm(&d) * norm(&gp.g));
        assert!((cos - 1.0).abs() < 1e-9);
        assert!((norm(&d) - 1e-2).abs() < 1e-8);
    }

    #[test]
    fn windowed_grads_match_bptt_with_exact_critics() {
        // with h dividing T and critics that are exactly zero the windowed sum
        // drops the cross-window terms, so it differs from bptt; with h = T it
        // is bptt itself
        let env = FunctionEnv::with_params(12, 8.0, StartDistribution::default());
        let cfg = small_cfg(Algorithm::Cgpo);
        let state = TrainState::init(&env, &cfg).unwrap();
        let batch = rollout(&env, &state.policy, 3, 12, 1).unwrap();
        let full = bptt_grads(&env, &batch, &state.policy).unwrap();
        let same = trajectory_grads(&env, &batch, &state.policy, (&state.critic_r, &state.critic_c), 12).unwrap();
        assert_eq!(full, same);
    }
}
