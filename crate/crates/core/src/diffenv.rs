//! Analytic environments with exact one-step Jacobians.
//!
//! Each environment is a pure function of `(state, action)`; `reset` is a pure
//! function of the seed. Reward and cost are evaluated at the pre-transition
//! state, and actions are clamped to the box `[action_low, action_high]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CgpoError, Result};
use crate::linalg::{all_finite, Mat};
use crate::seeding::rng_from;
use crate::Scalar;

/// Environment state vector.
pub type EnvState<S> = Vec<S>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Function,
    FloorFunction,
    PointMass,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Function => "function",
            EnvKind::FloorFunction => "floor-function",
            EnvKind::PointMass => "point-mass",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = CgpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "function" => Ok(EnvKind::Function),
            "floor-function" => Ok(EnvKind::FloorFunction),
            "point-mass" => Ok(EnvKind::PointMass),
            other => Err(CgpoError::config(
                "env",
                format!("unknown environment `{other}` (expected function, floor-function or point-mass)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EnvSpec<S> {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode length `T` in steps.
    pub horizon: usize,
    /// Threshold `b` on the undiscounted cumulative cost.
    pub cost_limit: S,
    pub action_low: S,
    pub action_high: S,
    pub differentiable: bool,
}

impl<S: Scalar> EnvSpec<S> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(CgpoError::config("episode_length", "horizon must be >= 1"));
        }
        if !(self.action_low < self.action_high) {
            return Err(CgpoError::config("action_low", "action_low must be < action_high"));
        }
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(CgpoError::config("state_dim", "dimensions must be positive"));
        }
        Ok(())
    }

    pub fn clamp_action(&self, action: &[S]) -> Vec<S> {
        action
            .iter()
            .map(|&a| a.max(self.action_low).min(self.action_high))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<S> {
    pub next_state: EnvState<S>,
    pub reward: S,
    pub cost: S,
}

/// One-step partial derivatives. Row vectors are stored as plain `Vec`s.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians<S> {
    pub df_ds: Mat<S>,
    pub df_da: Mat<S>,
    pub dr_ds: Vec<S>,
    pub dr_da: Vec<S>,
    pub dc_ds: Vec<S>,
    pub dc_da: Vec<S>,
}

impl<S: Scalar> StepJacobians<S> {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            df_ds: Mat::zeros(state_dim, state_dim),
            df_da: Mat::zeros(state_dim, action_dim),
            dr_ds: vec![S::zero(); state_dim],
            dr_da: vec![S::zero(); action_dim],
            dc_ds: vec![S::zero(); state_dim],
            dc_da: vec![S::zero(); action_dim],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.df_ds.is_finite()
            && self.df_da.is_finite()
            && all_finite(&self.dr_ds)
            && all_finite(&self.dr_da)
            && all_finite(&self.dc_ds)
            && all_finite(&self.dc_da)
    }
}

/// Initial-state distribution μ₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar", rename_all = "kebab-case", tag = "kind")]
pub enum StartDistribution<S> {
    /// Independent `Uniform(low, high)` per component.
    Uniform { low: S, high: S },
    Fixed { state: Vec<S> },
}

impl<S: Scalar> Default for StartDistribution<S> {
    fn default() -> Self {
        StartDistribution::Uniform {
            low: -S::one(),
            high: S::one(),
        }
    }
}

impl<S: Scalar> StartDistribution<S> {
    pub fn sample(&self, dim: usize, seed: u64) -> EnvState<S> {
        match self {
            StartDistribution::Uniform { low, high } => {
                let mut rng = rng_from(seed);
                let (lo, hi) = (low.to_f64_lossy(), high.to_f64_lossy());
                (0..dim)
                    .map(|_| S::lit(lo + (hi - lo) * rng.random::<f64>()))
                    .collect()
            }
            StartDistribution::Fixed { state } => {
                let mut s = state.clone();
                s.resize(dim, S::zero());
                s
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StartDistribution::Uniform { low, high } if !(low <= high) => {
                Err(CgpoError::config("init", "uniform start needs low <= high"))
            }
            StartDistribution::Fixed { state } if !all_finite(state) => {
                Err(CgpoError::config("init", "fixed start must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// A simulator layer: deterministic transition plus reward and cost signals.
pub trait DiffEnv<S: Scalar>: Send + Sync {
    fn spec(&self) -> &EnvSpec<S>;

    fn step(&self, state: &[S], action: &[S]) -> Result<StepResult<S>>;

    fn jacobians(&self, state: &[S], action: &[S]) -> Result<StepJacobians<S>>;

    fn reset(&self, seed: u64) -> EnvState<S>;
}

fn check_inputs<S: Scalar>(spec: &EnvSpec<S>, state: &[S], action: &[S]) -> Result<()> {
    check_dim("state", spec.state_dim, state.len())?;
    check_dim("action", spec.action_dim, action.len())?;
    if !all_finite(state) {
        return Err(CgpoError::InvalidState(format!("{state:?}")));
    }
    if !all_finite(action) {
        return Err(CgpoError::InvalidState(format!("non-finite action {action:?}")));
    }
    Ok(())
}

/// `f(x) = (x/10)² + 0.1 + 0.1·sin(8x/π)`.
pub fn function_cost<S: Scalar>(x: S) -> S {
    let tenth = x / S::lit(10.0);
    tenth * tenth + S::lit(0.1) + S::lit(0.1) * (S::lit(8.0 / PI) * x).sin()
}

pub fn function_cost_grad<S: Scalar>(x: S) -> S {
    x / S::lit(50.0) + S::lit(0.8 / PI) * (S::lit(8.0 / PI) * x).cos()
}

/// Floor variant: the quadratic term uses `floor(x)`.
pub fn floor_function_cost<S: Scalar>(x: S) -> S {
    let tenth = x.floor() / S::lit(10.0);
    tenth * tenth + S::lit(0.1) + S::lit(0.1) * (S::lit(8.0 / PI) * x).sin()
}

const FUNCTION_STEP: f64 = 0.2;

fn function_spec<S: Scalar>(name: &str, horizon: usize, cost_limit: S, differentiable: bool) -> EnvSpec<S> {
    EnvSpec {
        name: name.to_string(),
        state_dim: 1,
        action_dim: 1,
        horizon,
        cost_limit,
        action_low: -S::one(),
        action_high: S::one(),
        differentiable,
    }
}

/// 1-D walker: `s' = s + 0.2·a`, reward = cost = `f(s)`.
#[derive(Debug, Clone)]
pub struct FunctionEnv<S> {
    spec: EnvSpec<S>,
    start: StartDistribution<S>,
}

impl<S: Scalar> FunctionEnv<S> {
    /// Defaults: `T = 100`, `b = 8.0`, `s₀ ~ U(-1, 1)`.
    pub fn new() -> Self {
        Self::with_params(100, S::lit(8.0), StartDistribution::default())
    }

    pub fn with_params(horizon: usize, cost_limit: S, start: StartDistribution<S>) -> Self {
        Self {
            spec: function_spec("function", horizon, cost_limit, true),
            start,
        }
    }
}

impl<S: Scalar> Default for FunctionEnv<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> DiffEnv<S> for FunctionEnv<S> {
    fn spec(&self) -> &EnvSpec<S> {
        &self.spec
    }

    fn step(&self, state: &[S], action: &[S]) -> Result<StepResult<S>> {
        check_inputs(&self.spec, state, action)?;
        let a = self.spec.clamp_action(action)[0];
        let x = state[0];
        let f = function_cost(x);
        Ok(StepResult {
            next_state: vec![x + S::lit(FUNCTION_STEP) * a],
            reward: f,
            cost: f,
        })
    }

    fn jacobians(&self, state: &[S], action: &[S]) -> Result<StepJacobians<S>> {
        check_inputs(&self.spec, state, action)?;
        let df = function_cost_grad(state[0]);
        let mut jac = StepJacobians::zeros(1, 1);
        jac.df_ds.set(0, 0, S::one());
        jac.df_da.set(0, 0, S::lit(FUNCTION_STEP));
        jac.dr_ds[0] = df;
        jac.dc_ds[0] = df;
        Ok(jac)
    }

    fn reset(&self, seed: u64) -> EnvState<S> {
        self.start.sample(1, seed)
    }
}

/// Same transition as [`FunctionEnv`] with the non-differentiable floor cost.
#[derive(Debug, Clone)]
pub struct FloorFunctionEnv<S> {
    spec: EnvSpec<S>,
    start: StartDistribution<S>,
}

impl<S: Scalar> FloorFunctionEnv<S> {
    pub fn new() -> Self {
        Self::with_params(100, S::lit(8.0), StartDistribution::default())
    }

    pub fn with_params(horizon: usize, cost_limit: S, start: StartDistribution<S>) -> Self {
        Self {
            spec: function_spec("floor-function", horizon, cost_limit, false),
            start,
        }
    }
}

impl<S: Scalar> Default for FloorFunctionEnv<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> DiffEnv<S> for FloorFunctionEnv<S> {
    fn spec(&self) -> &EnvSpec<S> {
        &self.spec
    }

    fn step(&self, state: &[S], action: &[S]) -> Result<StepResult<S>> {
        check_inputs(&self.spec, state, action)?;
        let a = self.spec.clamp_action(action)[0];
        let x = state[0];
        let f = floor_function_cost(x);
        Ok(StepResult {
            next_state: vec![x + S::lit(FUNCTION_STEP) * a],
            reward: f,
            cost: f,
        })
    }

    fn jacobians(&self, _state: &[S], _action: &[S]) -> Result<StepJacobians<S>> {
        Err(CgpoError::NoJacobians(self.spec.name.clone()))
    }

    fn reset(&self, seed: u64) -> EnvState<S> {
        self.start.sample(1, seed)
    }
}

const POINT_MASS_DT: f64 = 0.1;

/// Double integrator with semi-implicit Euler steps.
///
/// `vel' = vel + 0.1·a`, `pos' = pos + 0.1·vel'`, reward `1 − pos²`,
/// cost `−pos²`. A negative cost limit forces the mass away from the origin
/// while the reward pulls it back.
#[derive(Debug, Clone)]
pub struct PointMassEnv<S> {
    spec: EnvSpec<S>,
    start: StartDistribution<S>,
}

impl<S: Scalar> PointMassEnv<S> {
    /// Defaults: `T = 100`, `b = -2.0`, both coordinates `~ U(-1, 1)`.
    pub fn new() -> Self {
        Self::with_params(100, S::lit(-2.0), StartDistribution::default())
    }

    pub fn with_params(horizon: usize, cost_limit: S, start: StartDistribution<S>) -> Self {
        Self {
            spec: EnvSpec {
                name: "point-mass".to_string(),
                state_dim: 2,
                action_dim: 1,
                horizon,
                cost_limit,
                action_low: -S::one(),
                action_high: S::one(),
                differentiable: true,
            },
            start,
        }
    }
}

impl<S: Scalar> Default for PointMassEnv<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> DiffEnv<S> for PointMassEnv<S> {
    fn spec(&self) -> &EnvSpec<S> {
        &self.spec
    }

    fn step(&self, state: &[S], action: &[S]) -> Result<StepResult<S>> {
        check_inputs(&self.spec, state, action)?;
        let a = self.spec.clamp_action(action)[0];
        let dt = S::lit(POINT_MASS_DT);
        let (pos, vel) = (state[0], state[1]);
        let vel_next = vel + dt * a;
        let pos_next = pos + dt * vel_next;
        let p2 = pos * pos;
        Ok(StepResult {
            next_state: vec![pos_next, vel_next],
            reward: S::one() - p2,
            cost: -p2,
        })
    }

    fn jacobians(&self, state: &[S], action: &[S]) -> Result<StepJacobians<S>> {
        check_inputs(&self.spec, state, action)?;
        let dt = S::lit(POINT_MASS_DT);
        let pos = state[0];
        let mut jac = StepJacobians::zeros(2, 1);
        jac.df_ds = Mat::from_rows(2, 2, vec![S::one(), dt, S::zero(), S::one()]);
        jac.df_da = Mat::from_rows(2, 1, vec![dt * dt, dt]);
        jac.dr_ds = vec![-S::lit(2.0) * pos, S::zero()];
        jac.dc_ds = vec![-S::lit(2.0) * pos, S::zero()];
        Ok(jac)
    }

    fn reset(&self, seed: u64) -> EnvState<S> {
        self.start.sample(2, seed)
    }
}

/// Builds an environment by name. `horizon`/`cost_limit` override the
/// per-environment defaults when given.
pub fn make_env<S: Scalar>(
    kind: EnvKind,
    horizon: Option<usize>,
    cost_limit: Option<S>,
    start: Option<StartDistribution<S>>,
) -> Result<Box<dyn DiffEnv<S>>> {
    let start = start.unwrap_or_default();
    start.validate()?;
    let env: Box<dyn DiffEnv<S>> = match kind {
        EnvKind::Function => Box::new(FunctionEnv::with_params(
            horizon.unwrap_or(100),
            cost_limit.unwrap_or(S::lit(8.0)),
            start,
        )),
        EnvKind::FloorFunction => Box::new(FloorFunctionEnv::with_params(
            horizon.unwrap_or(100),
            cost_limit.unwrap_or(S::lit(8.0)),
            start,
        )),
        EnvKind::PointMass => Box::new(PointMassEnv::with_params(
            horizon.unwrap_or(100),
            cost_limit.unwrap_or(S::lit(-2.0)),
            start,
        )),
    };
    env.spec().validate()?;
    Ok(env)
}
