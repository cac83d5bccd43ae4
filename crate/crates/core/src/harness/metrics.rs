//! Convergence step count and near-threshold violation ratio.

use serde::{Deserialize, Serialize};

use crate::error::{CgpoError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MetricsConfig<S> {
    /// Evaluation points per convergence window.
    pub conv_window: usize,
    /// Allowed return range inside the window, as a fraction of the whole curve's range.
    pub conv_threshold: S,
    /// Half-width of the critical area around `b`, as a fraction of `|b|`.
    pub critical_margin: S,
    /// Costs above `b + soft_margin·|b|` count as violations.
    pub soft_margin: S,
}

impl<S: Scalar> Default for MetricsConfig<S> {
    fn default() -> Self {
        Self {
            conv_window: 10,
            conv_threshold: S::lit(0.05),
            critical_margin: S::lit(0.1),
            soft_margin: S::lit(0.02),
        }
    }
}

impl<S: Scalar> MetricsConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.conv_window == 0 {
            return Err(CgpoError::config("conv_window", "must be >= 1"));
        }
        for (field, v) in [
            ("conv_threshold", self.conv_threshold),
            ("critical_margin", self.critical_margin),
        ] {
            if !(v > S::zero()) {
                return Err(CgpoError::config(field, "must be > 0"));
            }
        }
        if !(self.soft_margin >= S::zero()) {
            return Err(CgpoError::config("soft_margin", "must be >= 0"));
        }
        Ok(())
    }
}

/// One evaluation point of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CurvePoint<S> {
    pub env_steps: usize,
    pub ret: S,
    pub cost: S,
}

/// Environment steps at the first point from which the return varies by less
/// than `conv_threshold` of the curve's range over the next `conv_window`
/// points (or not at all), and whose cost is within the soft margin of `b`.
pub fn conv_steps<S: Scalar>(curve: &[CurvePoint<S>], b: S, cfg: &MetricsConfig<S>) -> Option<usize> {
    let w = cfg.conv_window;
    if curve.len() < w {
        return None;
    }
    let (lo, hi) = min_max(curve.iter().map(|p| p.ret));
    let tol = cfg.conv_threshold * (hi - lo);
    let cost_cap = b + cfg.soft_margin * b.abs();
    (0..=curve.len() - w).find_map(|i| {
        let (wl, wh) = min_max(curve[i..i + w].iter().map(|p| p.ret));
        ((wh - wl < tol || wh == wl) && curve[i].cost <= cost_cap).then_some(curve[i].env_steps)
    })
}

fn min_max<S: Scalar>(it: impl Iterator<Item = S>) -> (S, S) {
    it.fold((S::infinity(), S::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct VioRatio<S> {
    pub percent: S,
    pub critical: usize,
    pub violations: usize,
}

/// Percentage of updates inside the critical area `|J_C − b| ≤ margin·|b|`
/// whose cost exceeds `b + soft·|b|`. `None` when no update is critical.
pub fn vio_ratio<S: Scalar>(history: &[(S, S)], cfg: &MetricsConfig<S>) -> Option<VioRatio<S>> {
    let mut critical = 0;
    let mut violations = 0;
    for &(jc, b) in history {
        if (jc - b).abs() <= cfg.critical_margin * b.abs() {
            critical += 1;
            if jc > b + cfg.soft_margin * b.abs() {
                violations += 1;
            }
        }
    }
    (critical > 0).then(|| VioRatio {
        percent: S::lit(100.0) * S::from_usize_lossy(violations) / S::from_usize_lossy(critical),
        critical,
        violations,
    })
}
