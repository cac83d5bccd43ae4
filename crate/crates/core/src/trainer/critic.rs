//! Finite-horizon TD(λ) targets and critic regression.

use serde::{Deserialize, Serialize};

use super::fit::{fit_mlp, FitConfig, FitReport};
use crate::error::{CgpoError, Result};
use crate::gradients::Trajectory;
use crate::nets::Critic;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TdLambdaConfig<S> {
    pub td_lambda: S,
    pub critic_lr: S,
    pub critic_epochs: usize,
    pub minibatch: usize,
}

impl<S: Scalar> Default for TdLambdaConfig<S> {
    fn default() -> Self {
        Self {
            td_lambda: S::lit(0.95),
            critic_lr: S::lit(2e-3),
            critic_epochs: 5,
            minibatch: 64,
        }
    }
}

impl<S: Scalar> TdLambdaConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.td_lambda >= S::zero() && self.td_lambda <= S::one()) {
            return Err(CgpoError::config("td_lambda", "must lie in [0, 1]"));
        }
        if !(self.critic_lr >= S::zero()) {
            return Err(CgpoError::config("critic_lr", "must be >= 0"));
        }
        if self.minibatch == 0 {
            return Err(CgpoError::config("critic_minibatch", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Reward,
    Cost,
}

impl Signal {
    fn values<S: Scalar>(self, tr: &Trajectory<S>) -> &[S] {
        match self {
            Signal::Reward => &tr.rewards,
            Signal::Cost => &tr.costs,
        }
    }
}

/// Weights of the `n`-step returns `n = 1..=m` in the λ-return over `m`
/// remaining window steps: `(1−λ)λ^{n−1}` for `n < m`, and the remainder
/// (which equals `λ^{m−1}`) on the last one, so the weights add up to one.
pub fn td_lambda_weights<S: Scalar>(m: usize, lambda: S) -> Vec<S> {
    assert!(m >= 1, "window must contain at least one step");
    let mut w = Vec::with_capacity(m);
    let mut pow = S::one();
    let mut acc = S::zero();
    for _ in 1..m {
        let wn = (S::one() - lambda) * pow;
        w.push(wn);
        acc += wn;
        pow *= lambda;
    }
    w.push(S::one() - acc);
    w
}

/// λ-return targets for steps `start .. start + len` of every trajectory,
/// bootstrapping with `critic` at `start + len` (zero at the episode end).
/// Indexed `[trajectory][t − start]`.
pub fn td_lambda_targets<S: Scalar>(
    trajectories: &[Trajectory<S>],
    critic: &Critic<S>,
    start: usize,
    len: usize,
    lambda: S,
    signal: Signal,
) -> Result<Vec<Vec<S>>> {
    let mut out = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        let horizon = tr.len();
        let end = start + len;
        if len == 0 || end > horizon {
            return Err(CgpoError::Precondition(format!(
                "window [{start}, {end}) outside episode of length {horizon}"
            )));
        }
        let signal = signal.values(tr);
        // values[k] = V(s_{start+k}, start+k) for k = 1..=len
        let mut values = vec![S::zero(); len + 1];
        for (k, v) in values.iter_mut().enumerate().skip(1) {
            let t = start + k;
            *v = if t >= horizon { S::zero() } else { critic.value(&tr.states[t], t)? };
        }
        let mut targets = Vec::with_capacity(len);
        for t in start..end {
            let m = end - t;
            let weights = td_lambda_weights(m, lambda);
            let mut partial = S::zero();
            let mut target = S::zero();
            for (n, &w) in (1..=m).zip(&weights) {
                partial += signal[t + n - 1];
                target += w * (partial + values[t + n - start]);
            }
            targets.push(target);
        }
        out.push(targets);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSample<S> {
    pub state: Vec<S>,
    pub t: usize,
    pub target: S,
}

/// Regression of the critic onto targets; see [`fit_mlp`] for the
/// monotonicity and divergence guards.
pub fn critic_update<S: Scalar>(
    critic: &Critic<S>,
    samples: &[CriticSample<S>],
    cfg: &TdLambdaConfig<S>,
    seed: u64,
) -> Result<(Critic<S>, FitReport<S>)> {
    let inputs = samples
        .iter()
        .map(|s| critic.features(&s.state, s.t))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<S>> = samples.iter().map(|s| vec![s.target]).collect();
    let fit = FitConfig {
        lr: cfg.critic_lr,
        epochs: cfg.critic_epochs,
        minibatch: cfg.minibatch,
    };
    let (net, report) = fit_mlp(&critic.net, &inputs, &targets, &fit, seed, "critic")?;
    Ok((
        Critic {
            net,
            horizon: critic.horizon,
        },
        report,
    ))
}

/// TD(λ) samples over consecutive windows `[0, h), [h, 2h), ...` covering
/// the whole episode.
pub fn episode_samples<S: Scalar>(
    trajectories: &[Trajectory<S>],
    critic: &Critic<S>,
    h: usize,
    lambda: S,
    signal: Signal,
) -> Result<Vec<CriticSample<S>>> {
    let horizon = trajectories.first().map_or(0, Trajectory::len);
    let mut samples = Vec::with_capacity(trajectories.len() * horizon);
    let mut start = 0;
    while start < horizon {
        let len = h.min(horizon - start);
        let targets = td_lambda_targets(trajectories, critic, start, len, lambda, signal)?;
        for (tr, tg) in trajectories.iter().zip(targets) {
            for (k, target) in tg.into_iter().enumerate() {
                samples.push(CriticSample {
                    state: tr.states[start + k].clone(),
                    t: start + k,
                    target,
                });
            }
        }
        start += len;
    }
    Ok(samples)
}
