//! Trust-region step with a single linearised constraint:
//!
//! ```text
//! max_δ  gᵀδ   s.t.   c + qᵀδ ≤ 0,   δᵀδ ≤ δ̂
//! ```
//!
//! `delta_hat` is the *squared* radius; the step length is at most `√δ̂`.
//! When the two constraints are jointly active or the geometry is mixed the
//! duals are computed in closed form.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CgpoError, Result};
use crate::linalg::{all_finite, axpy, dot, norm, norm2, scaled};
use crate::Scalar;

static CAUCHY_SCHWARZ_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times `r − s²/t` came out negative and was clamped to zero.
pub fn cauchy_schwarz_clamps() -> u64 {
    CAUCHY_SCHWARZ_CLAMPS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepCase {
    /// No step inside the region satisfies the linearised constraint; move
    /// straight down the constraint gradient.
    InfeasibleRecovery,
    /// Every step inside the region satisfies it; move straight up `g`.
    AllFeasible,
    /// Mixed geometry, closed-form KKT solution.
    Boundary,
}

impl StepCase {
    pub fn label(self) -> &'static str {
        match self {
            StepCase::InfeasibleRecovery => "infeasible-recovery",
            StepCase::AllFeasible => "all-feasible",
            StepCase::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemInput<S> {
    pub g: Vec<S>,
    pub q: Vec<S>,
    pub c: S,
    pub delta_hat: S,
}

impl<S: Scalar> SubproblemInput<S> {
    pub fn new(g: Vec<S>, q: Vec<S>, c: S, delta_hat: S) -> Self {
        Self { g, q, c, delta_hat }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("constraint gradient", self.g.len(), self.q.len())?;
        if !(self.delta_hat > S::zero()) || !self.delta_hat.is_finite() {
            return Err(CgpoError::Precondition(format!(
                "trust-region size must be positive and finite, got {}",
                self.delta_hat
            )));
        }
        if !all_finite(&self.g) || !all_finite(&self.q) || !self.c.is_finite() {
            return Err(CgpoError::NonFinite {
                what: "subproblem input",
                step: 0,
            });
        }
        Ok(())
    }

    /// Tolerance below which a gradient norm counts as vanished.
    pub fn zero_tol(&self) -> S {
        S::lit(1e-10) * (S::one() + S::from_usize_lossy(self.g.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SubproblemSolution<S> {
    pub delta: Vec<S>,
    pub case: StepCase,
    /// Duals; zero outside the boundary case.
    pub lambda_star: S,
    pub nu_star: S,
    pub r: S,
    pub s: S,
    pub t: S,
}

pub fn classify<S: Scalar>(input: &SubproblemInput<S>) -> Result<StepCase> {
    input.validate()?;
    let t = norm2(&input.q);
    let c = input.c;
    if t.sqrt() <= input.zero_tol() {
        if c > S::zero() {
            return Err(CgpoError::VanishedConstraintGradient {
                norm: t.sqrt().to_f64_lossy(),
                c: c.to_f64_lossy(),
            });
        }
        return Ok(StepCase::AllFeasible);
    }
    if c * c / t > input.delta_hat {
        if c > S::zero() {
            Ok(StepCase::InfeasibleRecovery)
        } else {
            Ok(StepCase::AllFeasible)
        }
    } else {
        Ok(StepCase::Boundary)
    }
}

/// Closed interval `[lo, hi]` (`hi` may be infinite).
#[derive(Debug, Clone, Copy)]
struct Interval<S> {
    lo: S,
    hi: S,
}

impl<S: Scalar> Interval<S> {
    fn project(self, x: S) -> S {
        x.max(self.lo).min(self.hi)
    }
}

/// `Λ_a = {λ ≥ 0 : λc + s > 0}` and `Λ_b = {λ ≥ 0 : λc + s ≤ 0}`, closed.
fn lambda_sets<S: Scalar>(c: S, s: S) -> (Option<Interval<S>>, Option<Interval<S>>) {
    let zero = S::zero();
    let inf = S::infinity();
    if c < zero {
        let edge = -s / c;
        if s > zero {
            (Some(Interval { lo: zero, hi: edge }), Some(Interval { lo: edge, hi: inf }))
        } else {
            (None, Some(Interval { lo: zero, hi: inf }))
        }
    } else if c > zero {
        let edge = -s / c;
        if s > zero {
            (Some(Interval { lo: zero, hi: inf }), None)
        } else {
            (Some(Interval { lo: edge, hi: inf }), Some(Interval { lo: zero, hi: edge }))
        }
    } else if s > zero {
        (Some(Interval { lo: zero, hi: inf }), None)
    } else {
        (None, Some(Interval { lo: zero, hi: inf }))
    }
}

struct Scratch<S> {
    r: S,
    s: S,
    t: S,
    /// `‖g − (s/t)q‖²`, zero when `g ∥ q` to working precision.
    perp2: S,
}

fn scratch<S: Scalar>(input: &SubproblemInput<S>) -> Scratch<S> {
    let r = norm2(&input.g);
    let s = dot(&input.g, &input.q);
    let t = norm2(&input.q);
    let mut perp2 = r - s * s / t;
    if perp2 < S::zero() {
        CAUCHY_SCHWARZ_CLAMPS.fetch_add(1, Ordering::Relaxed);
        perp2 = S::zero();
    }
    if perp2 <= S::lit(1e-12) * r {
        perp2 = S::zero();
    }
    Scratch { r, s, t, perp2 }
}

/// `δ̂ − c²/t`, kept away from zero.
fn slack<S: Scalar>(input: &SubproblemInput<S>, t: S) -> S {
    let floor = S::eps() * input.delta_hat;
    (input.delta_hat - input.c * input.c / t).max(floor)
}

fn dual_a<S: Scalar>(lambda: S, sc: &Scratch<S>, c: S, delta_hat: S) -> S {
    let first = if sc.perp2 == S::zero() {
        S::zero()
    } else if lambda == S::zero() {
        S::neg_infinity()
    } else {
        -sc.perp2 / (S::lit(2.0) * lambda)
    };
    first + lambda / S::lit(2.0) * (c * c / sc.t - delta_hat) + sc.s * c / sc.t
}

fn dual_b<S: Scalar>(lambda: S, sc: &Scratch<S>, delta_hat: S) -> S {
    if lambda == S::zero() {
        if sc.r == S::zero() {
            return S::zero();
        }
        return S::neg_infinity();
    }
    -(sc.r / lambda + lambda * delta_hat) / S::lit(2.0)
}

/// Dual pair `(λ*, ν*)` for a boundary-case instance.
///
/// A vanished objective gradient returns the `(0, 0)` sentinel.
pub fn solve_dual<S: Scalar>(input: &SubproblemInput<S>) -> Result<(S, S)> {
    if classify(input)? != StepCase::Boundary {
        return Err(CgpoError::Precondition("solve_dual needs a boundary-case instance".into()));
    }
    if norm(&input.g) <= input.zero_tol() {
        return Ok((S::zero(), S::zero()));
    }
    let sc = scratch(input);
    Ok(duals_from_scratch(input, &sc).0)
}

/// Returns `((λ*, ν*), chose_a, a_interior)`.
fn duals_from_scratch<S: Scalar>(input: &SubproblemInput<S>, sc: &Scratch<S>) -> ((S, S), bool, bool) {
    let c = input.c;
    let (set_a, set_b) = lambda_sets(c, sc.s);
    let cand_a = set_a.map(|set| {
        let raw = (sc.perp2 / slack(input, sc.t)).sqrt();
        let lam = set.project(raw);
        (lam, dual_a(lam, sc, c, input.delta_hat), lam == raw)
    });
    let cand_b = set_b.map(|set| {
        let lam = set.project((sc.r / input.delta_hat).sqrt());
        (lam, dual_b(lam, sc, input.delta_hat))
    });
    let (lambda, chose_a, interior) = match (cand_a, cand_b) {
        (Some((la, va, int)), Some((lb, vb))) => {
            if va >= vb {
                (la, true, int)
            } else {
                (lb, false, false)
            }
        }
        (Some((la, _, int)), None) => (la, true, int),
        (None, Some((lb, _))) => (lb, false, false),
        // one of the two sets always contains 0
        (None, None) => unreachable!("Λ_a ∪ Λ_b = [0, ∞)"),
    };
    let nu = ((lambda * c + sc.s) / sc.t).max(S::zero());
    ((lambda, nu), chose_a, interior)
}

pub fn solve_step<S: Scalar>(input: &SubproblemInput<S>) -> Result<SubproblemSolution<S>> {
    let case = classify(input)?;
    let r = norm2(&input.g);
    let s = dot(&input.g, &input.q);
    let t = norm2(&input.q);
    let radius = input.delta_hat.sqrt();
    let zero = S::zero();
    let mut sol = SubproblemSolution {
        delta: vec![zero; input.g.len()],
        case,
        lambda_star: zero,
        nu_star: zero,
        r,
        s,
        t,
    };
    match case {
        StepCase::InfeasibleRecovery => {
            sol.delta = scaled(-radius / t.sqrt(), &input.q);
        }
        StepCase::AllFeasible => {
            let gn = r.sqrt();
            if gn > input.zero_tol() {
                sol.delta = scaled(radius / gn, &input.g);
            }
        }
        StepCase::Boundary => {
            if r.sqrt() <= input.zero_tol() {
                // objective is flat: smallest step that satisfies the constraint
                if input.c > zero {
                    sol.delta = scaled(-input.c / t, &input.q);
                }
                return Ok(sol);
            }
            let sc = scratch(input);
            let ((lambda, nu), chose_a, interior) = duals_from_scratch(input, &sc);
            sol.lambda_star = lambda;
            sol.nu_star = nu;
            sol.delta = if chose_a && nu > zero && (interior || sc.perp2 == zero) {
                // δ = g_⊥/λ − (c/t)q with ‖g_⊥‖/λ = √(δ̂ − c²/t)
                let mut d = scaled(-input.c / t, &input.q);
                if sc.perp2 > zero {
                    let mut perp = input.g.clone();
                    axpy(-s / t, &input.q, &mut perp);
                    let pn = norm(&perp);
                    axpy(slack(input, t).sqrt() / pn, &perp, &mut d);
                }
                d
            } else {
                let mut d = input.g.clone();
                axpy(-nu, &input.q, &mut d);
                d.iter_mut().for_each(|v| *v /= lambda);
                d
            };
            // rounding can leave the step a hair outside the ball
            let n2 = norm2(&sol.delta);
            if n2 > input.delta_hat {
                let k = (input.delta_hat / n2).sqrt();
                sol.delta.iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    Ok(sol)
}

/// KKT residuals of a solution against its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals<S> {
    /// `‖−g + νq + λδ‖`
    pub stationarity: S,
    /// `max(c + qᵀδ, 0)`
    pub linear_violation: S,
    /// `max(δᵀδ − δ̂, 0)`
    pub ball_violation: S,
    /// `|ν(c + qᵀδ)|`
    pub slack_nu: S,
    /// `|λ(δᵀδ − δ̂)|`
    pub slack_lambda: S,
    pub dual_feasible: bool,
}

pub fn kkt_residuals<S: Scalar>(input: &SubproblemInput<S>, sol: &SubproblemSolution<S>) -> KktResiduals<S> {
    let mut st: Vec<S> = input.g.iter().map(|&v| -v).collect();
    axpy(sol.nu_star, &input.q, &mut st);
    axpy(sol.lambda_star, &sol.delta, &mut st);
    let lin = input.c + dot(&input.q, &sol.delta);
    let ball = norm2(&sol.delta) - input.delta_hat;
    KktResiduals {
        stationarity: norm(&st),
        linear_violation: lin.max(S::zero()),
        ball_violation: ball.max(S::zero()),
        slack_nu: (sol.nu_star * lin).abs(),
        slack_lambda: (sol.lambda_star * ball).abs(),
        dual_feasible: sol.lambda_star >= S::zero() && sol.nu_star >= S::zero(),
    }
}
