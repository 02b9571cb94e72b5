use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::{clip_grad_norm, Adam};
use super::loss::{clipped_policy_loss, value_loss};
use super::{PpoConfig, TrajectoryBatch};
use crate::contrastive::{infonce_minibatch_loss, RelabeledBatch};
use crate::diffcore::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::nets::{EncoderParams, Mlp, PolicyParams};

/// The network trained alongside the policy.
pub enum CriticUpdate<'a> {
    /// Encoders stepped on InfoNCE over the relabeled pairs.
    Contrastive {
        encoders: &'a mut EncoderParams,
        opt: &'a mut Adam,
        relabeled: &'a RelabeledBatch,
        batch_size: usize,
    },
    /// Value MLP regressed on GAE returns within the policy minibatches.
    Value {
        net: &'a mut Mlp,
        opt: &'a mut Adam,
        returns: &'a [f64],
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub actor: f64,
    pub critic: f64,
}

/// Per-epoch means over minibatches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub policy_loss: f64,
    pub infonce_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub clip_fraction: f64,
    /// Clip fraction of the first policy minibatch, before any policy step
    /// in this epoch.
    pub first_clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
    pub policy_grad_norm: f64,
}

pub(crate) fn collect_grads(tape: &Tape, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|&v| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).numel()],
        })
        .collect()
}

/// One pass over the rollout: InfoNCE steps on shuffled relabeled
/// minibatches (contrastive critic), then clipped-surrogate steps on
/// shuffled transition minibatches. A value critic steps on the same
/// minibatches as the policy.
#[allow(clippy::too_many_arguments)]
pub fn update_epoch<R: Rng + ?Sized>(
    policy: &mut PolicyParams,
    policy_opt: &mut Adam,
    critic: CriticUpdate<'_>,
    batch: &TrajectoryBatch,
    advantages: &[f64],
    cfg: &PpoConfig,
    lr: LearningRates,
    rng: &mut R,
) -> Result<EpochStats> {
    batch.validate()?;
    let n = batch.len();
    if advantages.len() != n {
        return shape_err(format!("{} advantages for {n} transitions", advantages.len()));
    }
    let mut stats = EpochStats::default();

    let mut value_critic = None;
    match critic {
        CriticUpdate::Contrastive {
            encoders,
            opt,
            relabeled,
            batch_size,
        } => {
            let mut order: Vec<usize> = (0..relabeled.len()).collect();
            order.shuffle(rng);
            let mut total = 0.0;
            let mut count = 0;
            for idx in order.chunks(batch_size.max(1)) {
                let mut tape = Tape::new();
                let vars = encoders.bind(&mut tape, true);
                let loss = infonce_minibatch_loss(encoders, &mut tape, &vars, batch, relabeled, idx)?;
                tape.backward(loss)?;
                total += tape.value(loss).item();
                count += 1;
                let mut grads = collect_grads(&tape, &vars.all());
                clip_grad_norm(&mut grads, cfg.max_grad_norm);
                opt.step(encoders.params_mut(), &grads, lr.critic)?;
            }
            stats.infonce_loss = Some(total / count as f64);
        }
        CriticUpdate::Value { net, opt, returns } => {
            if returns.len() != n {
                return shape_err(format!("{} returns for {n} transitions", returns.len()));
            }
            value_critic = Some((net, opt, returns));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut count = 0usize;
    let mut v_total = 0.0;
    for idx in order.chunks(cfg.minibatch_size.max(1)) {
        let mut tape = Tape::new();
        let vars = policy.bind(&mut tape, true);
        let x = tape.constant(batch.policy_obs_rows(idx)?);
        let dist = policy.forward(&mut tape, &vars, x)?;
        let actions = batch.actions.gather(idx);
        let new_lp = dist.log_prob(&mut tape, &actions)?;
        let entropy = dist.entropy(&mut tape)?;
        let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
        let adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();
        let (loss, clip) = clipped_policy_loss(&mut tape, new_lp, &old, &adv, cfg.clip_eps, entropy, cfg.entropy_coef)?;
        tape.backward(loss)?;
        let mut grads = collect_grads(&tape, &vars.all());
        stats.policy_grad_norm += clip_grad_norm(&mut grads, cfg.max_grad_norm);
        policy_opt.step(policy.params_mut(), &grads, lr.actor)?;

        if count == 0 {
            stats.first_clip_fraction = clip.clip_fraction;
        }
        stats.policy_loss += tape.value(loss).item();
        stats.clip_fraction += clip.clip_fraction;
        stats.approx_kl += clip.approx_kl;
        stats.entropy += tape.data(entropy).iter().sum::<f64>() / idx.len() as f64;
        count += 1;

        if let Some((net, opt, returns)) = value_critic.as_mut() {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape, true);
            let x = tape.constant(batch.policy_obs_rows(idx)?);
            let out = net.forward(&mut tape, &vars, x)?;
            let pred = tape.reshape(out, &[idx.len()])?;
            let targets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
            let vl = value_loss(&mut tape, pred, &targets)?;
            let scaled = tape.scale(vl, cfg.value_coef)?;
            tape.backward(scaled)?;
            v_total += tape.value(vl).item();
            let mut grads = collect_grads(&tape, &vars.all());
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(net.params_mut(), &grads, lr.critic)?;
        }
    }
    let c = count as f64;
    stats.policy_loss /= c;
    stats.clip_fraction /= c;
    stats.approx_kl /= c;
    stats.entropy /= c;
    stats.policy_grad_norm /= c;
    if value_critic.is_some() {
        stats.value_loss = Some(v_total / c);
    }
    Ok(stats)
}
