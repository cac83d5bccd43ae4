//! Learned one-step dynamics, reward and cost, and the environment adaptor
//! that lets trajectory gradients flow through it.

use serde::{Deserialize, Serialize};

use super::fit::{fit_mlp, mse_loss, FitConfig, FitReport};
use crate::diffenv::{DiffEnv, EnvSpec, StepJacobians, StepResult};
use crate::error::{check_dim, CgpoError, Result};
use crate::gradients::Batch;
use crate::linalg::all_finite;
use crate::nets::WorldModel;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Transition<S> {
    pub state: Vec<S>,
    pub action: Vec<S>,
    pub next_state: Vec<S>,
    pub reward: S,
    pub cost: S,
}

/// Transitions of every trajectory in time order, actions clamped to the box.
pub fn batch_transitions<S: Scalar>(batch: &Batch<S>, spec: &EnvSpec<S>) -> Vec<Transition<S>> {
    let mut out = Vec::with_capacity(batch.env_steps());
    for tr in &batch.trajectories {
        for t in 0..tr.len() {
            out.push(Transition {
                state: tr.states[t].clone(),
                action: spec.clamp_action(&tr.actions[t]),
                next_state: tr.states[t + 1].clone(),
                reward: tr.rewards[t],
                cost: tr.costs[t],
            });
        }
    }
    out
}

/// Fixed-capacity ring buffer; the oldest transitions are overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<S> {
    data: Vec<Transition<S>>,
    capacity: usize,
    next: usize,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        Self {
            data: Vec::new(),
            capacity: capacity.max(1),
            next: 0,
        }
    }

    pub fn push(&mut self, tr: Transition<S>) {
        if self.data.len() < self.capacity {
            self.data.push(tr);
        } else {
            self.data[self.next] = tr;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Transition<S>>) {
        for tr in items {
            self.push(tr);
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Transition<S>] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ModelConfig<S> {
    pub hidden: Vec<usize>,
    pub lr: S,
    pub epochs: usize,
    pub minibatch: usize,
    pub capacity: usize,
}

impl<S: Scalar> Default for ModelConfig<S> {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: S::lit(1e-3),
            epochs: 5,
            minibatch: 64,
            capacity: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ModelFitReport<S> {
    pub fit: FitReport<S>,
    /// Per-component mean squared errors on the held-out transitions.
    pub holdout_state_mse: Option<S>,
    pub holdout_reward_mse: Option<S>,
    pub holdout_cost_mse: Option<S>,
}

fn model_io<S: Scalar>(model: &WorldModel<S>, data: &[Transition<S>]) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
    let mut xs = Vec::with_capacity(data.len());
    let mut ys = Vec::with_capacity(data.len());
    for tr in data {
        xs.push(model.input(&tr.state, &tr.action)?);
        ys.push(WorldModel::target(&tr.state, &tr.next_state, tr.reward, tr.cost));
    }
    Ok((xs, ys))
}

/// `(state, reward, cost)` mean squared errors of the model on `data`.
pub fn model_errors<S: Scalar>(model: &WorldModel<S>, data: &[Transition<S>]) -> Result<Option<(S, S, S)>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut es = S::zero();
    let mut er = S::zero();
    let mut ec = S::zero();
    for tr in data {
        let p = model.predict(&tr.state, &tr.action)?;
        es += p
            .next_state
            .iter()
            .zip(&tr.next_state)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>();
        er += (p.reward - tr.reward) * (p.reward - tr.reward);
        ec += (p.cost - tr.cost) * (p.cost - tr.cost);
    }
    let n = S::from_usize_lossy(data.len());
    Ok(Some((es / (n * S::from_usize_lossy(model.state_dim)), er / n, ec / n)))
}

/// Minimises the summed squared error on `(s', r, c)`.
pub fn world_model_train<S: Scalar>(
    model: &WorldModel<S>,
    train: &[Transition<S>],
    holdout: &[Transition<S>],
    cfg: &ModelConfig<S>,
    seed: u64,
) -> Result<(WorldModel<S>, ModelFitReport<S>)> {
    if train.is_empty() {
        return Err(CgpoError::Precondition("world model needs at least one transition".into()));
    }
    let (xs, ys) = model_io(model, train)?;
    let fit = FitConfig {
        lr: cfg.lr,
        epochs: cfg.epochs,
        minibatch: cfg.minibatch,
    };
    let (net, report) = fit_mlp(&model.net, &xs, &ys, &fit, seed, "world model")?;
    let trained = WorldModel {
        net,
        state_dim: model.state_dim,
        action_dim: model.action_dim,
    };
    let errs = model_errors(&trained, holdout)?;
    Ok((
        trained,
        ModelFitReport {
            fit: report,
            holdout_state_mse: errs.map(|e| e.0),
            holdout_reward_mse: errs.map(|e| e.1),
            holdout_cost_mse: errs.map(|e| e.2),
        },
    ))
}

/// Held-out loss in the training objective's units.
pub fn model_loss<S: Scalar>(model: &WorldModel<S>, data: &[Transition<S>]) -> Result<S> {
    let (xs, ys) = model_io(model, data)?;
    mse_loss(&model.net, &xs, &ys)
}

/// A world model seen as a differentiable environment. Rollouts through it
/// start from states supplied by the caller; `reset` returns the origin.
#[derive(Debug, Clone)]
pub struct WorldModelEnv<S> {
    pub model: WorldModel<S>,
    spec: EnvSpec<S>,
}

impl<S: Scalar> WorldModelEnv<S> {
    pub fn new(model: WorldModel<S>, real: &EnvSpec<S>) -> Result<Self> {
        check_dim("model state", real.state_dim, model.state_dim)?;
        check_dim("model action", real.action_dim, model.action_dim)?;
        let mut spec = real.clone();
        spec.name = format!("{}-model", real.name);
        spec.differentiable = true;
        Ok(Self { model, spec })
    }
}

impl<S: Scalar> DiffEnv<S> for WorldModelEnv<S> {
    fn spec(&self) -> &EnvSpec<S> {
        &self.spec
    }

    fn step(&self, state: &[S], action: &[S]) -> Result<StepResult<S>> {
        if !all_finite(state) {
            return Err(CgpoError::InvalidState(format!("{state:?}")));
        }
        let a = self.spec.clamp_action(action);
        let p = self.model.predict(state, &a)?;
        Ok(StepResult {
            next_state: p.next_state,
            reward: p.reward,
            cost: p.cost,
        })
    }

    fn jacobians(&self, state: &[S], action: &[S]) -> Result<StepJacobians<S>> {
        let a = self.spec.clamp_action(action);
        let x = self.model.input(state, &a)?;
        let cache = self.model.net.forward_cached(&x)?;
        let d_s = self.model.state_dim;
        let d_a = self.model.action_dim;
        let n_out = d_s + 2;
        let mut scratch = vec![S::zero(); self.model.net.num_params()];
        let mut rows = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let mut up = vec![S::zero(); n_out];
            up[i] = S::one();
            rows.push(self.model.net.backward_into(&cache, &up, &mut scratch)?);
        }
        let mut jac = StepJacobians::zeros(d_s, d_a);
        for (i, row) in rows.iter().enumerate().take(d_s) {
            for j in 0..d_s {
                let identity = if i == j { S::one() } else { S::zero() };
                jac.df_ds.set(i, j, identity + row[j]);
            }
            for j in 0..d_a {
                jac.df_da.set(i, j, row[d_s + j]);
            }
        }
        jac.dr_ds = rows[d_s][..d_s].to_vec();
        jac.dr_da = rows[d_s][d_s..].to_vec();
        jac.dc_ds = rows[d_s + 1][..d_s].to_vec();
        jac.dc_da = rows[d_s + 1][d_s..].to_vec();
        Ok(jac)
    }

    fn reset(&self, _seed: u64) -> Vec<S> {
        vec![S::zero(); self.spec.state_dim]
    }
}

/// Prediction helper used by tests and diagnostics.
pub fn predict_raw<S: Scalar>(model: &WorldModel<S>, state: &[S], action: &[S]) -> Result<(Vec<S>, S, S)> {
    let p = model.predict(state, action)?;
    Ok((p.next_state, p.reward, p.cost))
}
