//! Rollouts and the four estimators built on them.
//!
//! * first-order (pathwise) gradients through the environment: [`bptt_grads`]
//!   over the full horizon and [`shac_grads`] over a critic-bootstrapped window;
//! * the zeroth-order score-function gradient [`zobg_grads`];
//! * first-order value prediction [`gbe_predict`] and the importance-weighted
//!   advantage prediction [`abe_predict`].
//!
//! `g` and `q` are always ascent directions of `J_R` and `J_C`.

mod estimates;
mod fobg;
mod rollout;
mod zobg;

use serde::{Deserialize, Serialize};

pub use estimates::{abe_change, abe_predict, fit_discounted_critic, gbe_predict, relative_error};
pub use fobg::{bptt_grads, shac_grads, window_objective};
pub use rollout::{rollout, rollout_from, rollout_noisy};
pub use zobg::{zobg_grads, zobg_samples};

use crate::error::{CgpoError, Result};
use crate::linalg::sum_compensated;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Trajectory<S> {
    /// `T + 1` states, `states[0]` is the start state.
    pub states: Vec<Vec<S>>,
    pub actions: Vec<Vec<S>>,
    pub rewards: Vec<S>,
    pub costs: Vec<S>,
    pub seed: u64,
    /// Standard-normal draws of the Gaussian exploration wrapper, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<Vec<S>>>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> S {
        sum_compensated(self.rewards.iter().copied())
    }

    pub fn total_cost(&self) -> S {
        sum_compensated(self.costs.iter().copied())
    }
}

/// Part of the episode a gradient is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Window {
    Full,
    /// Steps `start .. start + len`; state `start` is treated as a constant.
    Span { start: usize, len: usize },
}

impl Window {
    pub fn bounds(self, horizon: usize) -> (usize, usize) {
        match self {
            Window::Full => (0, horizon),
            Window::Span { start, len } => (start, start + len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Batch<S> {
    pub trajectories: Vec<Trajectory<S>>,
    pub window: Window,
}

impl<S: Scalar> Batch<S> {
    pub fn new(trajectories: Vec<Trajectory<S>>) -> Self {
        Self {
            trajectories,
            window: Window::Full,
        }
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn with_window(mut self, window: Window) -> Result<Self> {
        let horizon = self.horizon();
        if let Window::Span { start, len } = window {
            if len == 0 || start + len > horizon {
                return Err(CgpoError::config(
                    "horizon",
                    format!("window [{start}, {}) outside episode of length {horizon}", start + len),
                ));
            }
        }
        self.window = window;
        Ok(self)
    }

    /// Batch mean of the undiscounted return.
    pub fn mean_reward(&self) -> S {
        mean(self.trajectories.iter().map(Trajectory::total_reward))
    }

    /// Batch mean of the undiscounted cumulative cost.
    pub fn mean_cost(&self) -> S {
        mean(self.trajectories.iter().map(Trajectory::total_cost))
    }

    pub fn start_states(&self) -> Vec<Vec<S>> {
        self.trajectories.iter().map(|t| t.states[0].clone()).collect()
    }

    pub fn env_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

pub(crate) fn mean<S: Scalar>(it: impl ExactSizeIterator<Item = S>) -> S {
    let n = it.len();
    if n == 0 {
        return S::zero();
    }
    it.sum::<S>() / S::from_usize_lossy(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct GradPair<S> {
    /// Ascent direction of `J_R`.
    pub g: Vec<S>,
    /// Ascent direction of `J_C`.
    pub q: Vec<S>,
    /// `J_C − b`.
    pub c: S,
    pub j_r: S,
    pub j_c: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EstimatorConfig<S> {
    /// Discount used by the advantage-based prediction.
    pub gamma: S,
    /// Exploration std of the Gaussian wrapper.
    pub sigma: S,
    pub td_lambda: S,
    /// Subtract the batch-mean return in the score-function estimator.
    pub baseline: bool,
}

impl<S: Scalar> Default for EstimatorConfig<S> {
    fn default() -> Self {
        Self {
            gamma: S::lit(0.99),
            sigma: S::lit(0.1),
            td_lambda: S::lit(0.95),
            baseline: false,
        }
    }
}

impl<S: Scalar> EstimatorConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > S::zero() && self.gamma <= S::one()) {
            return Err(CgpoError::config("gamma", "must lie in (0, 1]"));
        }
        if !(self.sigma > S::zero()) {
            return Err(CgpoError::config("sigma", "must be > 0"));
        }
        if !(self.td_lambda >= S::zero() && self.td_lambda <= S::one()) {
            return Err(CgpoError::config("td_lambda", "must lie in [0, 1]"));
        }
        Ok(())
    }
}
