//! Trust-region size control from the reduction and toleration ratios.

use serde::{Deserialize, Serialize};

use crate::error::{CgpoError, Result};
use crate::Scalar;

/// Denominators below this mark a ratio as degenerate.
const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RadiusController<S> {
    /// Squared radius `δ̂`.
    pub delta_hat: S,
    pub delta_lower: S,
    pub delta_upper: S,
    pub beta1: S,
    pub beta2: S,
    pub eta1: S,
    pub eta2: S,
}

impl<S: Scalar> RadiusController<S> {
    /// Shrink/grow factors 0.8/1.25 and thresholds 0.25/0.75.
    pub fn new(delta_init: S, delta_lower: S, delta_upper: S) -> Result<Self> {
        let ctrl = Self {
            delta_hat: delta_init,
            delta_lower,
            delta_upper,
            beta1: S::lit(0.8),
            beta2: S::lit(1.25),
            eta1: S::lit(0.25),
            eta2: S::lit(0.75),
        };
        ctrl.validate()?;
        Ok(ctrl)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = S::zero();
        let one = S::one();
        if !(zero < self.delta_lower && self.delta_lower <= self.delta_upper) {
            return Err(CgpoError::config("delta_lower", "need 0 < delta_lower <= delta_upper"));
        }
        if !(self.delta_lower <= self.delta_hat && self.delta_hat <= self.delta_upper) {
            return Err(CgpoError::config("delta_init", "must lie in [delta_lower, delta_upper]"));
        }
        if !(zero < self.beta1 && self.beta1 < one) {
            return Err(CgpoError::config("beta1", "need 0 < beta1 < 1"));
        }
        if !(self.beta2 > one) {
            return Err(CgpoError::config("beta2", "need beta2 > 1"));
        }
        if !(zero < self.eta1 && self.eta1 < self.eta2 && self.eta2 < one) {
            return Err(CgpoError::config("eta1", "need 0 < eta1 < eta2 < 1"));
        }
        Ok(())
    }
}

/// `None` marks a degenerate ratio, which passes every threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RatioPair<S> {
    pub rho: Option<S>,
    pub zeta: Option<S>,
}

/// `ρ = (J_R(θ) − J_R(θ')) / (Ĵ_R(θ) − Ĵ_R(θ'))` with `Ĵ_R(θ) = J_R(θ)`,
/// and `ζ = |b − J_C(θ')| / |J_C(θ') − Ĵ_C(θ')|`.
pub fn compute_ratios<S: Scalar>(jr_old: S, jr_new: S, jr_pred_new: S, jc_new: S, jc_pred_new: S, b: S) -> RatioPair<S> {
    let tiny = S::lit(DEGENERATE);
    let rho_den = jr_old - jr_pred_new;
    let rho = if rho_den.abs() < tiny {
        None
    } else {
        Some((jr_old - jr_new) / rho_den)
    };
    let zeta_den = (jc_new - jc_pred_new).abs();
    let zeta = if zeta_den < tiny {
        None
    } else {
        Some((b - jc_new).abs() / zeta_den)
    };
    RatioPair { rho, zeta }
}

pub fn update_radius<S: Scalar>(ratios: RatioPair<S>, ctrl: RadiusController<S>) -> RadiusController<S> {
    let below = |r: Option<S>, th: S| r.is_some_and(|v| !(v >= th));
    let at_least = |r: Option<S>, th: S| r.is_none_or(|v| v >= th);
    let mut out = ctrl;
    if below(ratios.rho, ctrl.eta1) || below(ratios.zeta, ctrl.eta1) {
        out.delta_hat = (ctrl.beta1 * ctrl.delta_hat).max(ctrl.delta_lower);
    } else if at_least(ratios.rho, ctrl.eta2) && at_least(ratios.zeta, ctrl.eta2) {
        out.delta_hat = (ctrl.beta2 * ctrl.delta_hat).min(ctrl.delta_upper);
    }
    out.delta_hat = out.delta_hat.max(ctrl.delta_lower).min(ctrl.delta_upper);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl() -> RadiusController<f64> {
        RadiusController::new(0.01, 1e-4, 0.04).unwrap()
    }

    #[test]
    fn ratio_examples() {
        let r = compute_ratios(1.0, 1.5, 1.5, 0.0, 0.0, 1.0);
        assert_eq!(r.rho, Some(1.0));
        let r = compute_ratios(0.0, 0.0, 0.0, 7.5, 7.5 + 1e-15, 8.0);
        assert_eq!(r.zeta, None);
        let r = compute_ratios(1.0, 0.5, 2.0, 0.0, 0.0, 0.0);
        assert_eq!(r.rho, Some(-0.5));
    }

    #[test]
    fn update_branches() {
        let c = ctrl();
        let shrink = update_radius(RatioPair { rho: Some(0.05), zeta: Some(0.9) }, c);
        assert!((shrink.delta_hat - 0.008).abs() < 1e-15);
        let grow = update_radius(RatioPair { rho: Some(0.9), zeta: Some(0.9) }, c);
        assert!((grow.delta_hat - 0.0125).abs() < 1e-15);
        let hold = update_radius(RatioPair { rho: Some(0.5), zeta: Some(0.9) }, c);
        assert_eq!(hold.delta_hat, 0.01);
        let degenerate = update_radius(RatioPair { rho: None, zeta: None }, c);
        assert!((degenerate.delta_hat - 0.0125).abs() < 1e-15);
        let nan = update_radius(RatioPair { rho: Some(f64::NAN), zeta: None }, c);
        assert!(nan.delta_hat < c.delta_hat);
    }

    #[test]
    fn clamped_to_bounds() {
        let mut c = ctrl();
        for _ in 0..50 {
            c = update_radius(RatioPair { rho: Some(1.0), zeta: Some(1.0) }, c);
        }
        assert_eq!(c.delta_hat, 0.04);
        for _ in 0..100 {
            c = update_radius(RatioPair { rho: Some(0.0), zeta: Some(1.0) }, c);
        }
        assert_eq!(c.delta_hat, 1e-4);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RadiusController::new(0.5, 1e-4, 0.04).is_err());
        let mut c = ctrl();
        c.eta1 = 0.8;
        assert!(c.validate().is_err());
    }
}
