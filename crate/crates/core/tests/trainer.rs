mod common;

use cgpo::diffenv::{make_env, DiffEnv, EnvKind, FunctionEnv, StartDistribution};
use cgpo::gradients::{rollout_noisy, Trajectory};
use cgpo::nets::{Critic, WorldModel};
use cgpo::trainer::{
    batch_transitions, critic_update, episode_samples, evaluate, model_errors, world_model_train, Algorithm, ModelConfig,
    RadiusController, Signal, TdLambdaConfig, TrainConfig, Trainer,
};
use common::fixtures::random_policy;

fn fixed_start_env() -> Box<dyn DiffEnv<f64>> {
    make_env(EnvKind::Function, Some(100), Some(8.0), Some(StartDistribution::Fixed { state: vec![-0.5] })).unwrap()
}

fn small_config(alg: Algorithm, seed: u64) -> TrainConfig<f64> {
    let mut cfg = TrainConfig::new(alg, seed);
    cfg.num_envs = 8;
    cfg.short_horizon = 100;
    cfg.policy_hidden = vec![16, 16];
    cfg.critic_hidden = vec![16, 16];
    cfg.radius = RadiusController::new(1e-2, 1e-5, 1.0).unwrap();
    cfg
}

#[test]
fn cgpo_settles_on_the_threshold() {
    let mut trainer = Trainer::new(fixed_start_env(), small_config(Algorithm::Cgpo, 0)).unwrap();
    let init = evaluate(trainer.env.as_ref(), &trainer.state.policy, 1, 0).unwrap();
    trainer.run(30, |_, _| Ok(())).unwrap();
    let end = evaluate(trainer.env.as_ref(), &trainer.state.policy, 1, 0).unwrap();
    assert!(end.mean_cost <= 8.0 * 1.02 && end.mean_cost >= 8.0 * 0.85, "{end:?}");
    assert!(end.mean_return > init.mean_return);
}

#[test]
fn training_is_deterministic() {
    for alg in [Algorithm::Cgpo, Algorithm::ShacLag] {
        let run = || {
            let mut cfg = small_config(alg, 7);
            cfg.short_horizon = 25;
            let mut t = Trainer::new(make_env(EnvKind::Function, Some(100), None, None).unwrap(), cfg).unwrap();
            t.run(4, |_, _| Ok(())).unwrap()
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn records_count_env_steps() {
    let mut cfg = small_config(Algorithm::BpttLag, 1);
    cfg.num_envs = 3;
    let mut t = Trainer::new(fixed_start_env(), cfg).unwrap();
    let recs = t.run(3, |_, _| Ok(())).unwrap();
    let steps: Vec<usize> = recs.iter().map(|r| r.env_steps).collect();
    assert_eq!(steps, vec![300, 600, 900]);
    assert!(recs.iter().all(|r| r.case.is_none()));
}

#[test]
fn short_horizon_longer_than_episode_is_rejected() {
    let mut cfg = small_config(Algorithm::Cgpo, 0);
    cfg.short_horizon = 101;
    let err = Trainer::new(fixed_start_env(), cfg).err().unwrap();
    assert!(err.to_string().contains("horizon"), "{err}");
}

#[test]
fn non_differentiable_env_needs_a_model() {
    let floor = || make_env::<f64>(EnvKind::FloorFunction, Some(20), None, None).unwrap();
    let mut cfg = small_config(Algorithm::Cgpo, 0);
    cfg.short_horizon = 20;
    assert!(Trainer::new(floor(), cfg.clone()).is_err());
    cfg.algorithm = Algorithm::MbCgpo;
    assert!(Trainer::new(floor(), cfg).is_ok());
}

#[test]
fn hard_wired_model_reproduces_the_cgpo_step() {
    let mut a = Trainer::new(fixed_start_env(), small_config(Algorithm::Cgpo, 3)).unwrap();
    let mut cfg = small_config(Algorithm::MbCgpo, 3);
    cfg.model.hidden = vec![8];
    let mut b = Trainer::new(fixed_start_env(), cfg).unwrap().with_hard_wired_model(fixed_start_env());
    let theta0 = a.state.policy.params().to_vec();
    assert_eq!(theta0, b.state.policy.params());
    a.step().unwrap();
    b.step().unwrap();
    let da: Vec<f64> = a.state.policy.params().iter().zip(&theta0).map(|(x, y)| x - y).collect();
    let db: Vec<f64> = b.state.policy.params().iter().zip(&theta0).map(|(x, y)| x - y).collect();
    let diff: f64 = da.iter().zip(&db).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = da.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(scale > 0.0 && diff <= 1e-6 * scale, "{diff} vs {scale}");
}

#[test]
fn world_model_learns_function_env_dynamics() {
    let env = FunctionEnv::with_params(50, 8.0, StartDistribution::default());
    let policy = random_policy(&env, vec![8], 0.5, 2);
    let collect = |seed| batch_transitions(&rollout_noisy(&env, &policy, 100, 50, 0.3, seed, None).unwrap(), env.spec());
    let train: Vec<_> = collect(1)
        .into_iter()
        .chain(collect(2))
        .collect();
    assert_eq!(train.len(), 10_000);
    let holdout = collect(3);
    let cfg = ModelConfig {
        epochs: 20,
        ..ModelConfig::default()
    };
    let model = WorldModel::new(1, 1, cfg.hidden.clone(), 4).unwrap();
    let (fitted, report) = world_model_train(&model, &train, &holdout, &cfg, 5).unwrap();
    let state_mse = report.holdout_state_mse.unwrap();
    assert!(state_mse <= 1e-4, "{state_mse:e}");
    assert_eq!(model_errors(&fitted, &holdout).unwrap().unwrap().0, state_mse);
}

fn constant_trajectory(horizon: usize, r: f64, x0: f64) -> Trajectory<f64> {
    Trajectory {
        states: (0..=horizon).map(|t| vec![x0 + 0.01 * t as f64]).collect(),
        actions: vec![vec![0.0]; horizon],
        rewards: vec![r; horizon],
        costs: vec![r; horizon],
        seed: 0,
        noise: None,
    }
}

#[test]
fn constant_reward_critic_learns_remaining_return() {
    let horizon = 20;
    let r = 0.5;
    let trajs: Vec<_> = (0..16).map(|i| constant_trajectory(horizon, r, -1.0 + 0.125 * i as f64)).collect();
    let cfg = TdLambdaConfig {
        td_lambda: 0.95,
        critic_lr: 3e-3,
        critic_epochs: 20,
        minibatch: 32,
    };
    let mut critic = Critic::new(1, horizon, vec![32, 32], 0).unwrap();
    for k in 0..40 {
        let samples = episode_samples(&trajs, &critic, 5, cfg.td_lambda, Signal::Reward).unwrap();
        critic = critic_update(&critic, &samples, &cfg, k).unwrap().0;
    }
    for tr in &trajs {
        for t in 0..horizon {
            let want = (horizon - t) as f64 * r;
            let got = critic.value(&tr.states[t], t).unwrap();
            assert!((got - want).abs() <= 0.05 * want, "t={t}: {got} vs {want}");
        }
    }
}

#[test]
fn evaluation_is_reproducible() {
    let env = fixed_start_env();
    let policy = random_policy(env.as_ref(), vec![4], 0.3, 0);
    let a = evaluate(env.as_ref(), &policy, 5, 9).unwrap();
    assert_eq!(a, evaluate(env.as_ref(), &policy, 5, 9).unwrap());
    let one = evaluate(env.as_ref(), &policy, 1, 9).unwrap();
    assert_eq!(one.std_cost, 0.0);
}
