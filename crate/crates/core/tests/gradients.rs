mod common;

use cgpo::diffenv::{make_env, EnvKind, FunctionEnv, StartDistribution};
use cgpo::gradients::{bptt_grads, gbe_predict, relative_error, rollout, rollout_from, zobg_grads, zobg_samples};
use common::fixtures::{fd_worst_error, random_policy};
use common::oracles::{central_diff, dot, function_env_cost, function_env_episode};

#[test]
fn bptt_matches_finite_differences() {
    for kind in [EnvKind::Function, EnvKind::PointMass] {
        let env = make_env::<f64>(kind, Some(25), None, None).unwrap();
        for seed in 0..5 {
            let worst = fd_worst_error(env.as_ref(), seed, 3, 20, None);
            assert!(worst < 1e-5, "{kind:?} seed {seed}: {worst:e}");
        }
    }
}

#[test]
fn shac_matches_finite_differences() {
    for kind in [EnvKind::Function, EnvKind::PointMass] {
        let env = make_env::<f64>(kind, Some(25), None, None).unwrap();
        for (seed, window) in [(0, (0, 8)), (1, (8, 8)), (2, (17, 8)), (3, (20, 5))] {
            let worst = fd_worst_error(env.as_ref(), seed, 3, 20, Some(window));
            assert!(worst < 1e-5, "{kind:?} window {window:?}: {worst:e}");
        }
    }
}

#[test]
fn rollout_agrees_with_closed_form_episode() {
    let env = FunctionEnv::with_params(40, 8.0, StartDistribution::default());
    let policy = random_policy(&env, vec![8], 0.5, 3);
    let batch = rollout(&env, &policy, 4, 40, 9).unwrap();
    for tr in &batch.trajectories {
        let act = |x: f64| policy.act(&[x]).unwrap()[0];
        let expect = function_env_episode(&act, tr.states[0][0], 40);
        assert!((tr.total_cost() - expect).abs() < 1e-12);
    }
}

#[test]
fn gbe_exact_on_linear_objective() {
    // J(θ) = aᵀθ has no curvature, so the prediction is exact
    let a = [0.3, -1.2, 2.0];
    let theta = [0.1, 0.2, -0.4];
    let delta = [0.05, -0.02, 0.01];
    let j = |t: &[f64]| dot(&a, t);
    let moved: Vec<f64> = theta.iter().zip(&delta).map(|(x, d)| x + d).collect();
    let pred = gbe_predict(j(&theta), &a, &delta).unwrap();
    assert!((pred - j(&moved)).abs() < 1e-15);
    assert_eq!(relative_error(j(&moved), pred, j(&theta)).map(|e| e < 1e-12), Some(true));
}

#[test]
fn gbe_on_quadratic_objective_is_accurate_for_small_steps() {
    // J(θ) = ‖θ‖², step of length 1e-4 along the gradient
    let theta = [0.6, -0.8];
    let grad: Vec<f64> = theta.iter().map(|v| 2.0 * v).collect();
    let delta: Vec<f64> = grad.iter().map(|g| 1e-4 * g / 2.0).collect();
    let moved: Vec<f64> = theta.iter().zip(&delta).map(|(x, d)| x + d).collect();
    let pred = gbe_predict(dot(&theta, &theta), &grad, &delta).unwrap();
    let err = relative_error(dot(&moved, &moved), pred, dot(&theta, &theta)).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn zobg_is_unbiased_for_the_smoothed_objective() {
    // Two-step episode: only the first action matters, so the smoothed
    // objective E_ξ f(x₀ + 0.2(μ + σξ)) is easy to differentiate by
    // common-random-number finite differences.
    let env = FunctionEnv::with_params(2, 8.0, StartDistribution::Fixed { state: vec![0.3] });
    let policy = random_policy(&env, vec![4], 0.3, 11);
    let sigma = 0.1;
    let n = 40_000;
    let (batch, scores) = zobg_samples(&env, &policy, n, 2, sigma, 5, None).unwrap();
    let est = zobg_grads(&env, &policy, n, 2, sigma, true, 5, None).unwrap();
    let xis: Vec<f64> = batch.trajectories.iter().map(|t| t.noise.as_ref().unwrap()[0][0]).collect();
    let smoothed = |p: &[f64]| {
        let pol = policy.with_params(p.to_vec()).unwrap();
        let mu = pol.act(&[0.3]).unwrap()[0];
        let f1: f64 = xis.iter().map(|&xi| function_env_cost(0.3 + 0.2 * (mu + sigma * xi).clamp(-1.0, 1.0))).sum();
        function_env_cost(0.3) + f1 / xis.len() as f64
    };
    let theta = policy.params().to_vec();
    let mean_cost = batch.mean_cost();
    for k in 0..theta.len() {
        let fd = central_diff(&mut |p| smoothed(p), &theta, k, 1e-6);
        // standard error of the per-trajectory score terms
        let terms: Vec<f64> = batch
            .trajectories
            .iter()
            .zip(&scores)
            .map(|(t, s)| s[k] * (t.total_cost() - mean_cost))
            .collect();
        let m = terms.iter().sum::<f64>() / n as f64;
        let se = (terms.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n * n) as f64).sqrt();
        assert!((est.q[k] - fd).abs() <= 5.0 * se + 1e-9, "coord {k}: {} vs {fd} (se {se})", est.q[k]);
    }
}

#[test]
fn bptt_is_deterministic() {
    let env = FunctionEnv::with_params(30, 8.0, StartDistribution::default());
    let policy = random_policy(&env, vec![8, 8], 0.5, 1);
    let a = bptt_grads(&env, &rollout(&env, &policy, 16, 30, 2).unwrap(), &policy).unwrap();
    let starts = rollout(&env, &policy, 16, 30, 2).unwrap().start_states();
    let b = bptt_grads(&env, &rollout_from(&env, &policy, &starts, 30).unwrap(), &policy).unwrap();
    assert_eq!(a.q, b.q);
    assert_eq!(a.g, b.g);
}
