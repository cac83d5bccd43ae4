//! Desk-scale experiments: prediction error of the first-order and
//! advantage-based estimates along training, pathwise vs score-function
//! gradients across episode lengths and step sizes, fixed vs adaptive
//! radius, and the two training-curve metrics.
//!
//! Every table is reproducible from its configuration; rows carry the
//! SHA-256 of the configuration's JSON form.

mod estimation;
mod gradient;
mod metrics;
mod radius;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use estimation::{ablate_estimation, stage_policies, EstimationRow, StageSource};
pub use gradient::{ablate_gradient, GradientRow};
pub use metrics::{conv_steps, vio_ratio, CurvePoint, MetricsConfig, VioRatio};
pub use radius::{ablate_radius, RadiusRow};

use crate::diffenv::{EnvKind, StartDistribution};
use crate::error::{CgpoError, Result};
use crate::trainer::TdLambdaConfig;
use crate::Scalar;

/// How the probe step of the estimation study is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// The normalised trust-region step the trainer would take.
    Solver,
    /// Uniform on the sphere.
    Sphere,
}

impl FromStr for Direction {
    type Err = CgpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solver" => Ok(Direction::Solver),
            "sphere" => Ok(Direction::Sphere),
            other => Err(CgpoError::config("direction", format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Gbe,
    Abe,
    Fobg,
    Zobg,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Gbe => "gbe",
            Estimator::Abe => "abe",
            Estimator::Fobg => "fobg",
            Estimator::Zobg => "zobg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AblationConfig<S> {
    pub env: EnvKind,
    /// Episode length of the estimation study.
    pub horizon: usize,
    pub cost_limit: S,
    pub start: StartDistribution<S>,
    /// Training-progress fractions in `[0, 1)` at which policies are probed.
    pub stages: Vec<S>,
    pub repetitions: usize,
    /// `‖δ‖` of the estimation study.
    pub step_norm: S,
    pub direction: Direction,
    pub traj_lengths: Vec<usize>,
    /// Training-progress fraction of the policy probed by the gradient study.
    pub gradient_stage: S,
    /// Squared step lengths of the gradient study.
    pub delta_hats: Vec<S>,
    /// The first seed drives the estimation and gradient studies; every
    /// seed yields one pair in the radius study.
    pub seeds: Vec<u64>,
    pub num_envs: usize,
    pub sigma: S,
    pub gamma: S,
    pub zobg_baseline: bool,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Regression settings of the advantage critic.
    pub critic: TdLambdaConfig<S>,
    /// CGPO iterations used to produce the stage policies.
    pub train_iterations: usize,
    /// Whether stage policies may be produced by training.
    pub allow_training: bool,
}

impl<S: Scalar> Default for AblationConfig<S> {
    fn default() -> Self {
        Self {
            env: EnvKind::Function,
            horizon: 100,
            cost_limit: S::lit(8.0),
            start: StartDistribution::default(),
            stages: vec![S::zero(), S::lit(0.25), S::lit(0.5), S::lit(0.75)],
            repetitions: 100,
            step_norm: S::lit(0.01),
            direction: Direction::Solver,
            traj_lengths: vec![1, 5, 10, 50, 100, 200],
            gradient_stage: S::lit(0.5),
            delta_hats: vec![S::lit(1e-4), S::lit(1e-3), S::lit(1e-2), S::lit(1e-1), S::one()],
            seeds: vec![0, 1, 2, 3, 4],
            num_envs: 16,
            sigma: S::lit(0.1),
            gamma: S::lit(0.99),
            zobg_baseline: true,
            policy_hidden: vec![16, 16],
            critic_hidden: vec![32, 32],
            critic: TdLambdaConfig {
                td_lambda: S::one(),
                critic_lr: S::lit(2e-3),
                critic_epochs: 20,
                minibatch: 64,
            },
            train_iterations: 40,
            allow_training: true,
        }
    }
}

impl<S: Scalar> AblationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(CgpoError::config("repetitions", "must be >= 1"));
        }
        if !(self.step_norm > S::zero()) {
            return Err(CgpoError::config("step_norm", "must be > 0"));
        }
        if self.horizon == 0 {
            return Err(CgpoError::config("horizon", "must be >= 1"));
        }
        if self.num_envs == 0 {
            return Err(CgpoError::config("num_envs", "must be >= 1"));
        }
        if self.stages.iter().any(|&f| !(f >= S::zero() && f < S::one())) {
            return Err(CgpoError::config("stages", "fractions must lie in [0, 1)"));
        }
        if !(self.gradient_stage >= S::zero() && self.gradient_stage < S::one()) {
            return Err(CgpoError::config("gradient_stage", "fraction must lie in [0, 1)"));
        }
        if self.traj_lengths.contains(&0) {
            return Err(CgpoError::config("traj_lengths", "lengths must be >= 1"));
        }
        if self.delta_hats.iter().any(|&d| !(d > S::zero())) {
            return Err(CgpoError::config("delta_hats", "must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(CgpoError::config("seeds", "need at least one seed"));
        }
        if !(self.sigma > S::zero()) {
            return Err(CgpoError::config("sigma", "must be > 0"));
        }
        if !(self.gamma > S::zero() && self.gamma < S::one()) {
            return Err(CgpoError::config("gamma", "must lie in (0, 1)"));
        }
        if self.zobg_baseline && self.num_envs < 2 {
            return Err(CgpoError::config("num_envs", "baseline subtraction needs at least 2 trajectories"));
        }
        self.start.validate()?;
        self.critic.validate()
    }
}

/// Mean and population std over the non-degenerate samples of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CellStats<S> {
    pub mean: S,
    pub std: S,
    pub samples: usize,
    pub excluded: usize,
}

impl<S: Scalar> CellStats<S> {
    pub fn from_samples(samples: &[Option<S>]) -> Self {
        let kept: Vec<S> = samples.iter().flatten().copied().collect();
        let excluded = samples.len() - kept.len();
        if kept.is_empty() {
            return Self {
                mean: S::nan(),
                std: S::nan(),
                samples: 0,
                excluded,
            };
        }
        let n = S::from_usize_lossy(kept.len());
        let mean = kept.iter().copied().sum::<S>() / n;
        let var = kept.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        Self {
            mean,
            std: var.sqrt(),
            samples: kept.len(),
            excluded,
        }
    }
}

/// Hex SHA-256 of the JSON encoding.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes rows with a header line; the file is replaced atomically.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(csv_err)?;
        for row in rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CgpoError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CgpoError::Io(io),
        other => CgpoError::Precondition(format!("csv: {other:?}")),
    }
}
