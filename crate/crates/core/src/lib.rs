//! Constrained gradient-based policy optimization (CGPO).
//!
//! Finite-horizon constraint values are predicted from trajectory gradients
//! obtained by differentiating through analytic environments, and each policy
//! update solves a trust-region subproblem with a linearised constraint in
//! closed form. The modules are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases at the crate root fix the 64-bit instantiation used by the tools.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffenv;
pub mod error;
pub mod harness;
pub mod gradients;
pub mod linalg;
pub mod nets;
pub mod scalar;
pub mod seeding;
pub mod subproblem;
pub mod trainer;

pub use error::{CgpoError, Result};
pub use scalar::Scalar;

pub type EnvSpec64 = diffenv::EnvSpec<f64>;
pub type FunctionEnv64 = diffenv::FunctionEnv<f64>;
pub type FloorFunctionEnv64 = diffenv::FloorFunctionEnv<f64>;
pub type PointMassEnv64 = diffenv::PointMassEnv<f64>;
pub type Mlp64 = nets::Mlp<f64>;
pub type Policy64 = nets::Policy<f64>;
pub type Critic64 = nets::Critic<f64>;
pub type WorldModel64 = nets::WorldModel<f64>;
pub type ParamVector64 = nets::ParamVector<f64>;
