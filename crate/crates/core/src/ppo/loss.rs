use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Diagnostics from one evaluation of the clipped surrogate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClipStats {
    /// Fraction of samples with `|r − 1| > ε`.
    pub clip_fraction: f64,
    /// Mean of `(r − 1) − ln r`.
    pub approx_kl: f64,
}

/// `−E[min(r·Â, clip(r, 1−ε, 1+ε)·Â)] − c·E[H]` with `r = exp(new − old)`.
///
/// `old_log_probs` and `advantages` enter as constants. Where the two
/// branches tie the gradient follows the unclipped one.
pub fn clipped_policy_loss(
    tape: &mut Tape,
    new_log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_eps: f64,
    entropy: Var,
    entropy_coef: f64,
) -> Result<(Var, ClipStats)> {
    let n = tape.value(new_log_probs).numel();
    if old_log_probs.len() != n || advantages.len() != n {
        return shape_err(format!(
            "policy loss: {n} log-probs, {} old log-probs, {} advantages",
            old_log_probs.len(),
            advantages.len()
        ));
    }
    let old = tape.constant(Tensor::new(&[n], old_log_probs.to_vec())?);
    let adv = tape.constant(Tensor::new(&[n], advantages.to_vec())?);
    let log_ratio = tape.sub(new_log_probs, old)?;
    let ratio = tape.exp(log_ratio)?;
    let unclipped = tape.mul(ratio, adv)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let clipped = tape.mul(clipped_ratio, adv)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let objective = tape.mean(surrogate)?;
    let mean_entropy = tape.mean(entropy)?;
    let bonus = tape.scale(mean_entropy, entropy_coef)?;
    let total = tape.add(objective, bonus)?;
    let loss = tape.neg(total)?;

    let r = tape.data(ratio);
    let stats = ClipStats {
        clip_fraction: r.iter().filter(|r| (*r - 1.0).abs() > clip_eps).count() as f64 / n as f64,
        approx_kl: r.iter().map(|r| (r - 1.0) - r.ln()).sum::<f64>() / n as f64,
    };
    Ok((loss, stats))
}

/// `0.5·E[(V − target)²]`.
pub fn value_loss(tape: &mut Tape, predicted: Var, targets: &[f64]) -> Result<Var> {
    let n = tape.value(predicted).numel();
    if targets.len() != n {
        return shape_err(format!("value loss: {n} predictions, {} targets", targets.len()));
    }
    let shape = tape.shape(predicted).to_vec();
    let t = tape.constant(Tensor::new(&shape, targets.to_vec())?);
    let diff = tape.sub(predicted, t)?;
    let sq = tape.mul(diff, diff)?;
    let m = tape.mean(sq)?;
    tape.scale(m, 0.5)
}

/// Generalized advantage estimation by reverse recursion.
///
/// `rewards` and `dones` are `[rows×steps]`; `values` is `[rows×(steps+1)]`
/// with the bootstrap value last in each row. A done at `t` cuts both the
/// bootstrap and the recursion. Returns `(advantages, returns)` with
/// `returns = advantages + V`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    rows: usize,
    steps: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != rows * steps || dones.len() != rows * steps || values.len() != rows * (steps + 1) {
        return shape_err(format!(
            "gae: {} rewards, {} dones, {} values for {rows}×{steps}",
            rewards.len(),
            dones.len(),
            values.len()
        ));
    }
    let mut adv = vec![0.0; rows * steps];
    let mut ret = vec![0.0; rows * steps];
    for r in 0..rows {
        let v = &values[r * (steps + 1)..(r + 1) * (steps + 1)];
        let mut acc = 0.0;
        for t in (0..steps).rev() {
            let i = r * steps + t;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * v[t + 1] * live - v[t];
            acc = delta + gamma * lambda * live * acc;
            adv[i] = acc;
            ret[i] = acc + v[t];
        }
    }
    Ok((adv, ret))
}
