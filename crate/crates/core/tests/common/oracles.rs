//! Reference answers computed without touching the library's own algorithms.

/// Plain dot product, written out so nothing is shared with the library.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean projection onto `{x : ‖x‖² ≤ dh, c + qᵀx ≤ 0}` (assumed nonempty).
pub fn project_ball_halfspace(y: &[f64], q: &[f64], c: f64, dh: f64) -> Vec<f64> {
    let radius = dh.sqrt();
    let t = dot(q, q);
    let in_half = |x: &[f64]| c + dot(q, x) <= 1e-14;
    let in_ball = |x: &[f64]| dot(x, x) <= dh * (1.0 + 1e-14);
    if in_half(y) && in_ball(y) {
        return y.to_vec();
    }
    let ny = norm(y);
    let yb: Vec<f64> = if ny > radius { y.iter().map(|v| v * radius / ny).collect() } else { y.to_vec() };
    if in_half(&yb) {
        return yb;
    }
    let viol = (c + dot(q, y)).max(0.0) / t;
    let yh: Vec<f64> = y.iter().zip(q).map(|(a, b)| a - viol * b).collect();
    if in_ball(&yh) {
        return yh;
    }
    // both active: nearest point on the circle {qᵀx = -c} ∩ sphere
    let rho = (dh - c * c / t).max(0.0).sqrt();
    let along = dot(q, y) / t;
    let perp: Vec<f64> = y.iter().zip(q).map(|(a, b)| a - along * b).collect();
    let np = norm(&perp);
    q.iter()
        .zip(&perp)
        .map(|(qi, pi)| -c / t * qi + if np > 0.0 { rho * pi / np } else { 0.0 })
        .collect()
}

/// Projected-gradient ascent on `gᵀx` over the ball ∩ halfspace.
pub fn projected_gradient_objective(g: &[f64], q: &[f64], c: f64, dh: f64, iters: usize) -> f64 {
    let gn = norm(g).max(1e-300);
    let step = 0.5 * dh.sqrt() / gn;
    let mut x = project_ball_halfspace(&vec![0.0; g.len()], q, c, dh);
    for _ in 0..iters {
        let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + step * b).collect();
        let next = project_ball_halfspace(&y, q, c, dh);
        let moved: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    dot(g, &x)
}

/// Optimum by geometry: the unconstrained ball maximiser if it is feasible,
/// otherwise the best point of the circle where the constraint is tight.
pub fn geometric_optimum(g: &[f64], q: &[f64], c: f64, dh: f64) -> Vec<f64> {
    let radius = dh.sqrt();
    let gn = norm(g);
    let xb: Vec<f64> = g.iter().map(|v| v * radius / gn).collect();
    if c + dot(q, &xb) <= 0.0 {
        return xb;
    }
    let t = dot(q, q);
    let rho = (dh - c * c / t).max(0.0).sqrt();
    let along = dot(g, q) / t;
    let perp: Vec<f64> = g.iter().zip(q).map(|(a, b)| a - along * b).collect();
    let np = norm(&perp);
    q.iter()
        .zip(&perp)
        .map(|(qi, pi)| -c / t * qi + if np > 1e-14 * gn { rho * pi / np } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoCase {
    Infeasible,
    AllFeasible,
    Mixed,
}

/// Range of `c + qᵀx` over the ball decides the geometry.
pub fn geometric_case(q: &[f64], c: f64, dh: f64) -> GeoCase {
    let reach = dh.sqrt() * norm(q);
    if c - reach > 0.0 {
        GeoCase::Infeasible
    } else if c + reach < 0.0 {
        GeoCase::AllFeasible
    } else {
        GeoCase::Mixed
    }
}

/// Central difference of a scalar function of a parameter vector.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += h;
    let mut xm = x.to_vec();
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// `f(x) = (x/10)² + 0.1 + 0.1·sin(8x/π)` evaluated directly.
pub fn function_env_cost(x: f64) -> f64 {
    (x / 10.0).powi(2) + 0.1 + 0.1 * (8.0 * x / std::f64::consts::PI).sin()
}

/// Fourth-order central difference (Richardson on steps `h` and `2h`).
pub fn richardson_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let d1 = central_diff(f, x, k, h);
    let d2 = central_diff(f, x, k, 2.0 * h);
    (4.0 * d1 - d2) / 3.0
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Cumulative cost and reward of one deterministic episode, with every
/// transition computed here from the closed-form FunctionEnv rules.
pub fn function_env_episode(act: &dyn Fn(f64) -> f64, x0: f64, horizon: usize) -> f64 {
    let mut x = x0;
    let mut total = 0.0;
    for _ in 0..horizon {
        total += function_env_cost(x);
        x += 0.2 * act(x).clamp(-1.0, 1.0);
    }
    total
}

/// `max_j |φ(½+h_j) − 2φ(½) + φ(½−h_j)| / h_j²` over `h_j = 2^-j`, `j = 1..=8`.
pub fn second_difference_curvature(phi: &mut dyn FnMut(f64) -> f64) -> f64 {
    let mid = phi(0.5);
    (1..=8)
        .map(|j| {
            let h = 0.5f64.powi(j);
            ((phi(0.5 + h) - 2.0 * mid + phi(0.5 - h)) / (h * h)).abs()
        })
        .fold(0.0, f64::max)
}
