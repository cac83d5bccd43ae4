use super::Batch;
use crate::error::{check_dim, CgpoError, Result};
use crate::linalg::dot;
use crate::nets::{Critic, Policy};
use crate::trainer::{critic_update, CriticSample, TdLambdaConfig};
use crate::Scalar;

/// First-order prediction `Ĵ(θ + δ) = J(θ) + δᵀ∇J(θ)`.
pub fn gbe_predict<S: Scalar>(j0: S, grad: &[S], delta: &[S]) -> Result<S> {
    check_dim("step", grad.len(), delta.len())?;
    Ok(j0 + dot(delta, grad))
}

/// `|J_new − Ĵ_new| / |J_new − J_old|`, or `None` when the actual shift is
/// below `1e-12` and the sample has to be excluded.
pub fn relative_error<S: Scalar>(j_true_new: S, j_est_new: S, j_true_old: S) -> Option<S> {
    let denom = (j_true_new - j_true_old).abs();
    if !(denom > S::lit(1e-12)) {
        return None;
    }
    Some((j_true_new - j_est_new).abs() / denom)
}

/// Discounted cost-to-go `Σ_{k≥t} γ^{k−t} c_k` for every step.
fn discounted_to_go<S: Scalar>(costs: &[S], gamma: S) -> Vec<S> {
    let mut out = vec![S::zero(); costs.len()];
    let mut acc = S::zero();
    for t in (0..costs.len()).rev() {
        acc = costs[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

fn log_density_gap<S: Scalar>(action: &[S], mean_new: &[S], mean_old: &[S], sigma: S) -> S {
    let mut d = S::zero();
    for ((&a, &mn), &mo) in action.iter().zip(mean_new).zip(mean_old) {
        d += (a - mo) * (a - mo) - (a - mn) * (a - mn);
    }
    d / (S::lit(2.0) * sigma * sigma)
}

/// Importance-weighted advantage sum
/// `(1/N) Σ_i Σ_t γ^t · π'(a|s)/π(a|s) · (G^γ_t − V(s_t, t))`
/// on a batch sampled from the Gaussian wrapper of `old`.
pub fn abe_change<S: Scalar>(
    batch: &Batch<S>,
    old: &Policy<S>,
    new: &Policy<S>,
    gamma: S,
    sigma: S,
    critic: &Critic<S>,
) -> Result<S> {
    if !(gamma < S::one() && gamma > S::zero()) {
        return Err(CgpoError::config("gamma", "advantage-based estimation needs 0 < gamma < 1"));
    }
    if batch.is_empty() {
        return Err(CgpoError::Precondition("empty batch".into()));
    }
    let mut total = S::zero();
    for tr in &batch.trajectories {
        if tr.noise.is_none() {
            return Err(CgpoError::Precondition(
                "advantage-based estimation needs a batch from the Gaussian wrapper".into(),
            ));
        }
        let to_go = discounted_to_go(&tr.costs, gamma);
        let mut disc = S::one();
        for t in 0..tr.len() {
            let s = &tr.states[t];
            let ratio = log_density_gap(&tr.actions[t], &new.act(s)?, &old.act(s)?, sigma).exp();
            let adv = to_go[t] - critic.value(s, t)?;
            total += disc * ratio * adv;
            disc *= gamma;
        }
    }
    Ok(total / S::from_usize_lossy(batch.len()))
}

/// `Ĵ(π') = J(π) + abe_change(..)`; `base` is the caller's `J(π)`.
pub fn abe_predict<S: Scalar>(
    batch: &Batch<S>,
    old: &Policy<S>,
    new: &Policy<S>,
    gamma: S,
    sigma: S,
    critic: &Critic<S>,
    base: S,
) -> Result<S> {
    Ok(base + abe_change(batch, old, new, gamma, sigma, critic)?)
}

/// Regresses a critic onto the discounted cost-to-go of a batch.
pub fn fit_discounted_critic<S: Scalar>(
    batch: &Batch<S>,
    critic: &Critic<S>,
    gamma: S,
    cfg: &TdLambdaConfig<S>,
    seed: u64,
) -> Result<Critic<S>> {
    let mut samples = Vec::with_capacity(batch.env_steps());
    for tr in &batch.trajectories {
        for (t, g) in discounted_to_go(&tr.costs, gamma).into_iter().enumerate() {
            samples.push(CriticSample {
                state: tr.states[t].clone(),
                t,
                target: g,
            });
        }
    }
    Ok(critic_update(critic, &samples, cfg, seed)?.0)
}
