//! Random networks and episodes for the property suites.

use cgpo::diffenv::DiffEnv;
use cgpo::nets::{Critic, Policy};
use cgpo::seeding::rng_from;
use rand::Rng;

/// Policy with every parameter redrawn from `U(-scale, scale)`.
pub fn random_policy(env: &dyn DiffEnv<f64>, hidden: Vec<usize>, scale: f64, seed: u64) -> Policy<f64> {
    let spec = env.spec();
    let mut p = Policy::new(spec.state_dim, spec.action_dim, hidden, spec.action_low, spec.action_high, seed).unwrap();
    let mut rng = rng_from(seed ^ 0x5eed);
    for v in p.params_mut().iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
    p
}

pub fn random_critic(state_dim: usize, horizon: usize, hidden: Vec<usize>, scale: f64, seed: u64) -> Critic<f64> {
    let mut c = Critic::new(state_dim, horizon, hidden, seed).unwrap();
    let mut rng = rng_from(seed ^ 0xc0de);
    for v in c.net.params.values.iter_mut() {
        *v = rng.random_range(-scale..scale);
    }
    c
}

/// `k` distinct coordinates out of `n`.
pub fn sample_coords(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec()
}

use cgpo::gradients::{bptt_grads, rollout, rollout_from, shac_grads, window_objective, Window};

use super::oracles::{rel_err, richardson_diff};

/// Worst relative error between analytic `(g, q)` and finite differences of
/// the rolled-out objective, over `coords` sampled parameters. `window`
/// selects the SHAC loss with random critics; `None` checks BPTT.
pub fn fd_worst_error(env: &dyn DiffEnv<f64>, seed: u64, n: usize, coords: usize, window: Option<(usize, usize)>) -> f64 {
    let horizon = env.spec().horizon;
    let policy = random_policy(env, vec![8, 8], 0.5, seed);
    let batch = rollout(env, &policy, n, horizon, seed).unwrap();
    let theta = policy.params().to_vec();
    let (analytic, mut objective): (_, Box<dyn FnMut(&[f64]) -> (f64, f64)>) = match window {
        None => {
            let gp = bptt_grads(env, &batch, &policy).unwrap();
            let starts = batch.start_states();
            (
                gp,
                Box::new(move |p: &[f64]| {
                    let b = rollout_from(env, &policy.with_params(p.to_vec()).unwrap(), &starts, horizon).unwrap();
                    (b.mean_reward(), b.mean_cost())
                }),
            )
        }
        Some((start, len)) => {
            let sd = env.spec().state_dim;
            let cr = random_critic(sd, horizon, vec![6], 0.4, seed + 1);
            let cc = random_critic(sd, horizon, vec![6], 0.4, seed + 2);
            let starts: Vec<Vec<f64>> = batch.trajectories.iter().map(|t| t.states[start].clone()).collect();
            let win = batch.with_window(Window::Span { start, len }).unwrap();
            let gp = shac_grads(env, &win, &policy, &cr, &cc).unwrap();
            (
                gp,
                Box::new(move |p: &[f64]| {
                    window_objective(env, &policy.with_params(p.to_vec()).unwrap(), &starts, start, len, Some((&cr, &cc))).unwrap()
                }),
            )
        }
    };
    let mut worst: f64 = 0.0;
    for k in sample_coords(theta.len(), coords, seed ^ 0xfd) {
        let fr = richardson_diff(&mut |p| objective(p).0, &theta, k, 1e-4);
        let fc = richardson_diff(&mut |p| objective(p).1, &theta, k, 1e-4);
        worst = worst.max(rel_err(analytic.g[k], fr, 1e-6)).max(rel_err(analytic.q[k], fc, 1e-6));
    }
    worst
}
