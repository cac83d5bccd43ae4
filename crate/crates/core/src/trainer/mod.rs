//! The outer optimisation loops: trust-region CGPO, the Lagrangian
//! baselines and the model-based variant, plus the critic, world-model and
//! radius machinery they share.

mod critic;
mod fit;
mod iteration;
mod radius;
mod world_model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use critic::{
    critic_update, episode_samples, td_lambda_targets, td_lambda_weights, CriticSample, Signal, TdLambdaConfig,
};
pub use fit::{fit_mlp, mse_loss, FitConfig, FitReport};
pub use iteration::{
    cgpo_iteration, curvature_probe, lagrangian_iteration, mb_cgpo_iteration, trajectory_grads, BoundCheck,
};
pub use radius::{compute_ratios, update_radius, RadiusController, RatioPair};
pub use world_model::{
    batch_transitions, model_errors, model_loss, predict_raw, world_model_train, ModelConfig, ModelFitReport,
    ReplayBuffer, Transition, WorldModelEnv,
};

use crate::diffenv::DiffEnv;
use crate::error::{CgpoError, Result};
use crate::gradients::rollout;
use crate::nets::{Critic, Policy, WorldModel};
use crate::seeding::{split_seed, CRITIC_INIT, MODEL_INIT, POLICY_INIT};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Cgpo,
    BpttLag,
    ShacLag,
    MbCgpo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cgpo => "cgpo",
            Algorithm::BpttLag => "bptt-lag",
            Algorithm::ShacLag => "shac-lag",
            Algorithm::MbCgpo => "mb-cgpo",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = CgpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgpo" => Ok(Algorithm::Cgpo),
            "bptt-lag" => Ok(Algorithm::BpttLag),
            "shac-lag" => Ok(Algorithm::ShacLag),
            "mb-cgpo" => Ok(Algorithm::MbCgpo),
            other => Err(CgpoError::config(
                "algorithm",
                format!("unknown algorithm {other:?} (expected cgpo, bptt-lag, shac-lag or mb-cgpo)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TrainConfig<S> {
    pub algorithm: Algorithm,
    pub num_envs: usize,
    /// Window length `h` of the critic-bootstrapped gradient; `h >= T` means
    /// plain backpropagation through the whole episode.
    pub short_horizon: usize,
    pub radius: RadiusController<S>,
    /// When false the radius stays at its initial value.
    pub adaptive_radius: bool,
    pub td: TdLambdaConfig<S>,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Primal step length of the Lagrangian baselines.
    pub primal_lr: S,
    /// Dual step size; `None` means `1e-3·|b|`.
    pub dual_lr: Option<S>,
    pub model: ModelConfig<S>,
    /// Measure the curvature bounds on boundary steps taken from feasible policies.
    pub monitor_bounds: bool,
    pub seed: u64,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            num_envs: 64,
            short_horizon: 32,
            radius: RadiusController::new(S::lit(1e-3), S::lit(1e-5), S::lit(1e-1)).expect("default radius"),
            adaptive_radius: true,
            td: TdLambdaConfig::default(),
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            primal_lr: S::lit(1e-2),
            dual_lr: None,
            model: ModelConfig::default(),
            monitor_bounds: false,
            seed,
        }
    }

    pub fn validate(&self, env: &dyn DiffEnv<S>) -> Result<()> {
        let spec = env.spec();
        spec.validate()?;
        if self.num_envs == 0 {
            return Err(CgpoError::config("num_envs", "must be >= 1"));
        }
        if self.short_horizon == 0 {
            return Err(CgpoError::config("horizon", "must be >= 1"));
        }
        if self.short_horizon > spec.horizon {
            return Err(CgpoError::config(
                "horizon",
                format!("short horizon {} exceeds episode length {}", self.short_horizon, spec.horizon),
            ));
        }
        self.radius.validate()?;
        self.td.validate()?;
        if self.policy_hidden.contains(&0) {
            return Err(CgpoError::config("policy_hidden", "layer sizes must be positive"));
        }
        if self.critic_hidden.contains(&0) {
            return Err(CgpoError::config("critic_hidden", "layer sizes must be positive"));
        }
        if !(self.primal_lr > S::zero()) {
            return Err(CgpoError::config("primal_lr", "must be > 0"));
        }
        if let Some(d) = self.dual_lr {
            if !(d >= S::zero()) {
                return Err(CgpoError::config("dual_lr", "must be >= 0"));
            }
        }
        match self.algorithm {
            Algorithm::MbCgpo => {
                if self.model.hidden.contains(&0) {
                    return Err(CgpoError::config("model_hidden", "layer sizes must be positive"));
                }
                if self.model.minibatch == 0 {
                    return Err(CgpoError::config("model_minibatch", "must be >= 1"));
                }
            }
            _ if !spec.differentiable => {
                return Err(CgpoError::config(
                    "algorithm",
                    format!("{} needs a differentiable environment; use mb-cgpo", self.algorithm),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn dual_step(&self, b: S) -> S {
        self.dual_lr.unwrap_or(S::lit(1e-3) * b.abs())
    }
}

#[derive(Debug, Clone)]
pub struct ModelState<S> {
    pub model: WorldModel<S>,
    pub replay: ReplayBuffer<S>,
}

#[derive(Debug, Clone)]
pub struct TrainState<S> {
    pub policy: Policy<S>,
    pub critic_r: Critic<S>,
    pub critic_c: Critic<S>,
    pub model: Option<ModelState<S>>,
    pub radius: RadiusController<S>,
    /// Lagrange multiplier of the baselines; unused by CGPO.
    pub lagrange: S,
    pub k: usize,
    pub env_steps: usize,
}

impl<S: Scalar> TrainState<S> {
    pub fn init(env: &dyn DiffEnv<S>, cfg: &TrainConfig<S>) -> Result<Self> {
        let spec = env.spec();
        let seed = cfg.seed;
        let policy = Policy::new(
            spec.state_dim,
            spec.action_dim,
            cfg.policy_hidden.clone(),
            spec.action_low,
            spec.action_high,
            split_seed(seed, POLICY_INIT, 0),
        )?;
        let critic_r = Critic::new(spec.state_dim, spec.horizon, cfg.critic_hidden.clone(), split_seed(seed, CRITIC_INIT, 0))?;
        let critic_c = Critic::new(spec.state_dim, spec.horizon, cfg.critic_hidden.clone(), split_seed(seed, CRITIC_INIT, 1))?;
        let model = match cfg.algorithm {
            Algorithm::MbCgpo => Some(ModelState {
                model: WorldModel::new(spec.state_dim, spec.action_dim, cfg.model.hidden.clone(), split_seed(seed, MODEL_INIT, 0))?,
                replay: ReplayBuffer::new(cfg.model.capacity),
            }),
            _ => None,
        };
        Ok(Self {
            policy,
            critic_r,
            critic_c,
            model,
            radius: cfg.radius,
            lagrange: S::zero(),
            k: 0,
            env_steps: 0,
        })
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct IterationRecord<S> {
    pub k: usize,
    pub algorithm: Algorithm,
    /// Training-batch `J_R`, `J_C` of the pre-update policy.
    pub j_r: S,
    pub j_c: S,
    pub b: S,
    /// `None` for the Lagrangian baselines.
    pub case: Option<String>,
    /// Radius used for this update.
    pub delta_hat: S,
    pub delta_hat_next: S,
    pub rho: Option<S>,
    pub zeta: Option<S>,
    pub lambda_star: Option<S>,
    pub nu_star: Option<S>,
    pub lagrange: S,
    pub step_norm2: S,
    /// Cumulative training environment steps after this iteration.
    pub env_steps: usize,
    /// Evaluation batch before and after the update (common start states).
    pub eval_j_r: S,
    pub eval_j_c: S,
    pub eval_j_r_new: S,
    pub eval_j_c_new: S,
    /// First-order predictions of the post-update evaluation values.
    pub pred_j_r: S,
    pub pred_j_c: S,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundCheck<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_loss_r: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_loss_c: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_holdout_mse: Option<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EvalSummary<S> {
    pub episodes: usize,
    pub mean_return: S,
    pub std_return: S,
    pub mean_cost: S,
    pub std_cost: S,
    pub cost_limit: S,
    pub feasible: bool,
}

/// Deterministic evaluation over `episodes` fresh episodes (population std).
pub fn evaluate<S: Scalar>(env: &dyn DiffEnv<S>, policy: &Policy<S>, episodes: usize, seed: u64) -> Result<EvalSummary<S>> {
    let spec = env.spec();
    let batch = rollout(env, policy, episodes, spec.horizon, seed)?;
    let rs: Vec<S> = batch.trajectories.iter().map(|t| t.total_reward()).collect();
    let cs: Vec<S> = batch.trajectories.iter().map(|t| t.total_cost()).collect();
    let stats = |xs: &[S]| {
        let n = S::from_usize_lossy(xs.len());
        let m = xs.iter().copied().sum::<S>() / n;
        let v = xs.iter().map(|&x| (x - m) * (x - m)).sum::<S>() / n;
        (m, v.sqrt())
    };
    let (mean_return, std_return) = stats(&rs);
    let (mean_cost, std_cost) = stats(&cs);
    Ok(EvalSummary {
        episodes,
        mean_return,
        std_return,
        mean_cost,
        std_cost,
        cost_limit: spec.cost_limit,
        feasible: mean_cost <= spec.cost_limit,
    })
}

/// Owns an environment, a configuration and the evolving state.
pub struct Trainer<S: Scalar> {
    pub env: Box<dyn DiffEnv<S>>,
    /// Replaces the learned model in MB-CGPO when set.
    pub hard_wired_model: Option<Box<dyn DiffEnv<S>>>,
    pub cfg: TrainConfig<S>,
    pub state: TrainState<S>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(env: Box<dyn DiffEnv<S>>, cfg: TrainConfig<S>) -> Result<Self> {
        cfg.validate(env.as_ref())?;
        let state = TrainState::init(env.as_ref(), &cfg)?;
        Ok(Self {
            env,
            hard_wired_model: None,
            cfg,
            state,
        })
    }

    pub fn with_hard_wired_model(mut self, model: Box<dyn DiffEnv<S>>) -> Self {
        self.hard_wired_model = Some(model);
        self
    }

    pub fn step(&mut self) -> Result<IterationRecord<S>> {
        let env = self.env.as_ref();
        match self.cfg.algorithm {
            Algorithm::Cgpo => cgpo_iteration(&mut self.state, env, &self.cfg),
            Algorithm::BpttLag | Algorithm::ShacLag => lagrangian_iteration(&mut self.state, env, &self.cfg),
            Algorithm::MbCgpo => mb_cgpo_iteration(&mut self.state, env, self.hard_wired_model.as_deref(), &self.cfg),
        }
    }

    /// Runs `iterations` updates, handing each record to `sink`.
    pub fn run(
        &mut self,
        iterations: usize,
        mut sink: impl FnMut(&IterationRecord<S>, &TrainState<S>) -> Result<()>,
    ) -> Result<Vec<IterationRecord<S>>> {
        let mut out = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let rec = self.step()?;
            sink(&rec, &self.state)?;
            out.push(rec);
        }
        Ok(out)
    }
}
