use thiserror::Error;

#[derive(Debug, Error)]
pub enum CgpoError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("no analytic Jacobians for environment `{0}`")]
    NoJacobians(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("constraint gradient vanished while infeasible (|q| = {norm:e}, c = {c:e})")]
    VanishedConstraintGradient { norm: f64, c: f64 },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("divergence in {what}: loss {loss:e} exceeds {limit:e}")]
    Divergence {
        what: &'static str,
        loss: f64,
        limit: f64,
    },

    #[error("time index {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CgpoError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CgpoError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that indicate a numerical blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            CgpoError::NonFinite { .. }
                | CgpoError::Divergence { .. }
                | CgpoError::InvalidState(_)
                | CgpoError::VanishedConstraintGradient { .. }
        )
    }
}

pub type Result<T, E = CgpoError> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CgpoError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
