//! Safeguarded minibatch regression shared by the critics and the world model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CgpoError, Result};
use crate::linalg::all_finite;
use crate::nets::{Adam, Mlp};
use crate::seeding::rng_from;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FitConfig<S> {
    pub lr: S,
    pub epochs: usize,
    pub minibatch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FitReport<S> {
    pub initial_loss: S,
    pub final_loss: S,
    /// Accepted full-data loss after each epoch.
    pub epoch_losses: Vec<S>,
    /// Epochs that were rolled back because the loss went up.
    pub rejected_epochs: usize,
}

/// Mean over samples of the summed squared output error.
pub fn mse_loss<S: Scalar>(net: &Mlp<S>, inputs: &[Vec<S>], targets: &[Vec<S>]) -> Result<S> {
    if inputs.is_empty() {
        return Ok(S::zero());
    }
    let mut total = S::zero();
    for (x, y) in inputs.iter().zip(targets) {
        let out = net.forward(x)?;
        total += out.iter().zip(y).map(|(&o, &t)| (o - t) * (o - t)).sum::<S>();
    }
    Ok(total / S::from_usize_lossy(inputs.len()))
}

/// Adam on minibatches. An epoch whose full-data loss exceeds the previous
/// accepted loss is rolled back and the learning rate halved, so the accepted
/// loss sequence never increases. A loss above `1e3 ×` the initial one is
/// reported as divergence.
pub fn fit_mlp<S: Scalar>(
    net: &Mlp<S>,
    inputs: &[Vec<S>],
    targets: &[Vec<S>],
    cfg: &FitConfig<S>,
    seed: u64,
    what: &'static str,
) -> Result<(Mlp<S>, FitReport<S>)> {
    if inputs.len() != targets.len() {
        return Err(CgpoError::DimensionMismatch {
            what: "regression targets",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| !all_finite(t)) {
        return Err(CgpoError::NonFinite { what: "regression targets", step: 0 });
    }
    let mut net = net.clone();
    let initial = mse_loss(&net, inputs, targets)?;
    let mut report = FitReport {
        initial_loss: initial,
        final_loss: initial,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        rejected_epochs: 0,
    };
    if inputs.is_empty() || cfg.epochs == 0 {
        return Ok((net, report));
    }
    let mut opt = Adam::new(net.num_params(), cfg.lr);
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mb = cfg.minibatch.max(1);
    let mut grad = vec![S::zero(); net.num_params()];
    let mut best = initial;
    for _ in 0..cfg.epochs {
        let saved_params = net.params.values.clone();
        let saved_opt = opt.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(mb) {
            grad.iter_mut().for_each(|g| *g = S::zero());
            let scale = S::lit(2.0) / S::from_usize_lossy(chunk.len());
            for &i in chunk {
                let cache = net.forward_cached(&inputs[i])?;
                let up: Vec<S> = cache
                    .output
                    .iter()
                    .zip(&targets[i])
                    .map(|(&o, &t)| scale * (o - t))
                    .collect();
                net.backward_into(&cache, &up, &mut grad)?;
            }
            opt.step(&mut net.params.values, &grad);
        }
        let loss = mse_loss(&net, inputs, targets)?;
        if !loss.is_finite() || (initial > S::zero() && loss > S::lit(1e3) * initial) {
            return Err(CgpoError::Divergence {
                what,
                loss: loss.to_f64_lossy(),
                limit: 1e3 * initial.to_f64_lossy(),
            });
        }
        if loss > best {
            net.params.values = saved_params;
            opt = saved_opt;
            opt.lr /= S::lit(2.0);
            report.rejected_epochs += 1;
        } else {
            best = loss;
            opt.lr = (opt.lr * S::lit(1.05)).min(cfg.lr);
        }
        report.epoch_losses.push(best);
    }
    report.final_loss = best;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetConfig;

    #[test]
    fn memorises_a_single_point() {
        let net = Mlp::<f64>::new(NetConfig::new(2, 3, vec![8]), 0).unwrap();
        let x = vec![vec![0.3, -0.2]];
        let y = vec![vec![0.5, -1.0, 0.25]];
        let cfg = FitConfig { lr: 0.01, epochs: 3000, minibatch: 1 };
        let (_, rep) = fit_mlp(&net, &x, &y, &cfg, 1, "test").unwrap();
        assert!(rep.final_loss < 1e-8, "{} {}", rep.final_loss, rep.rejected_epochs);
        assert!(rep.epoch_losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_lr_and_zero_targets_leave_params() {
        let net = Mlp::<f64>::new(NetConfig::new(1, 1, vec![4]), 0).unwrap();
        let x = vec![vec![0.1], vec![0.7]];
        let y = vec![vec![0.0], vec![0.0]];
        let cfg = FitConfig { lr: 0.1, epochs: 5, minibatch: 2 };
        let (out, rep) = fit_mlp(&net, &x, &y, &cfg, 1, "test").unwrap();
        assert_eq!(rep.final_loss, 0.0);
        assert_eq!(out.params, net.params);
        let y = vec![vec![1.0], vec![2.0]];
        let cfg = FitConfig { lr: 0.0, epochs: 1, minibatch: 2 };
        let (out, _) = fit_mlp(&net, &x, &y, &cfg, 1, "test").unwrap();
        assert_eq!(out.params, net.params);
    }
}
