use rand::Rng;

use super::infonce::state_action_embeddings;
use super::ContrastiveConfig;
use crate::diffcore::{Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::nets::{EncoderParams, PolicyParams};
use crate::ppo::TrajectoryBatch;
use crate::spaces::Actions;

/// Added to the standard deviation when standardizing advantages.
pub const NORM_EPS: f64 = 1e-8;
/// Allowed deviation of a probability row sum from 1.
pub const PROB_SUM_TOL: f64 = 1e-8;
/// Rows per forward pass when scoring a whole rollout.
const CHUNK: usize = 2048;

/// `ψ(g)` for each row of `goals`, without gradient tracking.
pub fn goal_embeddings(critic: &EncoderParams, goals: Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = critic.bind(&mut tape, false);
    let g = tape.constant(goals);
    let psi = critic.encode_goal(&mut tape, &vars, g)?;
    Ok(tape.value(psi).clone())
}

fn expand_goal(psi_star: &Tensor, rows: usize) -> Result<Tensor> {
    match psi_star.shape() {
        [d] => Tensor::new(&[rows, *d], psi_star.data().repeat(rows)),
        [r, _] if *r == rows => Ok(psi_star.clone()),
        s => shape_err(format!("goal embedding of shape {s:?} for {rows} rows")),
    }
}

/// `Q(o, a, g*) = −‖φ(o, a) − ψ(g*)‖₂` for every action: `[B×|A|]`.
///
/// `psi_star` is either one embedding `[d]` shared by all rows or one per
/// row `[B×d]`.
pub fn q_values_discrete(critic: &EncoderParams, obs: Tensor, psi_star: &Tensor) -> Result<Tensor> {
    let rows = obs.shape()[0];
    let mut tape = Tape::new();
    let vars = critic.bind(&mut tape, false);
    let o = tape.constant(obs);
    let phi = critic.encode_sa_discrete(&mut tape, &vars, o)?;
    let psi = tape.constant(expand_goal(psi_star, rows)?);
    let dist = tape.block_dist(phi, psi)?;
    let q = tape.neg(dist)?;
    Ok(tape.value(q).clone())
}

/// `Q(o, a, g*)` at the supplied actions (clamped to the action box): `[B]`.
pub fn q_values_continuous(critic: &EncoderParams, obs: Tensor, actions: &Actions, psi_star: &Tensor) -> Result<Vec<f64>> {
    let rows = obs.shape()[0];
    if actions.len() != rows {
        return shape_err(format!("{} actions for {rows} observations", actions.len()));
    }
    let mut tape = Tape::new();
    let vars = critic.bind(&mut tape, false);
    let phi = state_action_embeddings(critic, &mut tape, &vars, obs, actions)?;
    let psi = tape.constant(expand_goal(psi_star, rows)?);
    let dist = tape.row_dist(phi, psi)?;
    Ok(tape.data(dist).iter().map(|d| -d).collect())
}

/// `V(o) = Σ_a π(a|o) Q(o, a)` per row.
pub fn value_discrete(q: &Tensor, probs: &Tensor) -> Result<Vec<f64>> {
    if q.shape() != probs.shape() || q.shape().len() != 2 {
        return shape_err(format!("q {:?} vs probs {:?}", q.shape(), probs.shape()));
    }
    let n = q.last_dim();
    let mut v = Vec::with_capacity(q.rows());
    for (qr, pr) in q.data().chunks(n).zip(probs.data().chunks(n)) {
        let total: f64 = pr.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL || pr.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract(format!("policy row sums to {total}, not 1")));
        }
        v.push(qr.iter().zip(pr).map(|(q, p)| q * p).sum());
    }
    Ok(v)
}

/// `V(o) ≈ (1/K) Σ_k Q(o, a_k)` with `a_k ~ π(·|o)`, clamped like rollout
/// actions. `enc_obs` feeds the critic and `policy_obs` the policy; rows
/// must correspond.
pub fn value_continuous_mc<R: Rng + ?Sized>(
    critic: &EncoderParams,
    policy: &PolicyParams,
    enc_obs: &Tensor,
    policy_obs: &Tensor,
    psi_star: &Tensor,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("Monte-Carlo value needs at least one sample".into()));
    }
    let rows = enc_obs.shape()[0];
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape, false);
    let x = tape.constant(policy_obs.clone());
    let dist = policy.forward(&mut tape, &vars, x)?;
    let mut acc = vec![0.0; rows];
    for _ in 0..k {
        let a = dist.sample(&tape, rng);
        let q = q_values_continuous(critic, enc_obs.clone(), &a, psi_star)?;
        for (s, q) in acc.iter_mut().zip(q) {
            *s += q;
        }
    }
    Ok(acc.into_iter().map(|s| s / k as f64).collect())
}

/// Standardizes to mean 0 and (population) std 1.
pub fn normalize_advantages(a: &[f64]) -> Vec<f64> {
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    a.iter().map(|x| (x - mean) / (std + NORM_EPS)).collect()
}

/// `A = Q − V`, optionally standardized over the whole batch.
pub fn advantage(q_chosen: &[f64], v: &[f64], normalize: bool) -> Result<Vec<f64>> {
    if q_chosen.len() != v.len() {
        return shape_err(format!("{} Q values vs {} values", q_chosen.len(), v.len()));
    }
    let raw: Vec<f64> = q_chosen.iter().zip(v).map(|(q, v)| q - v).collect();
    Ok(if normalize && !raw.is_empty() {
        normalize_advantages(&raw)
    } else {
        raw
    })
}

/// Critic-derived quantities for one rollout, all detached.
#[derive(Debug, Clone)]
pub struct AdvantageEstimate {
    pub q_chosen: Vec<f64>,
    pub values: Vec<f64>,
    /// `Q − V` before normalization.
    pub raw: Vec<f64>,
    /// What the policy loss consumes.
    pub advantages: Vec<f64>,
}

/// Scores every transition of `batch` with the contrastive critic.
///
/// Target-goal embeddings are computed once for the whole batch.
/// `rng` drives only the continuous Monte-Carlo value samples.
pub fn contrastive_advantages<R: Rng + ?Sized>(
    critic: &EncoderParams,
    policy: &PolicyParams,
    batch: &TrajectoryBatch,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<AdvantageEstimate> {
    batch.validate()?;
    let n = batch.len();
    let goals = Tensor::new(&[n, batch.goal_dim], batch.goal_star.clone())?;
    let psi_all = goal_embeddings(critic, goals)?;
    let d = psi_all.last_dim();
    let mut q_chosen = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for idx in all.chunks(CHUNK) {
        let mut psi = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            psi.extend_from_slice(psi_all.row(i));
        }
        let psi = Tensor::new(&[idx.len(), d], psi)?;
        let obs = batch.obs_rows(idx)?;
        let pobs = batch.policy_obs_rows(idx)?;
        match batch.actions.gather(idx) {
            Actions::Discrete(a) => {
                let q = q_values_discrete(critic, obs, &psi)?;
                let mut tape = Tape::new();
                let vars = policy.bind(&mut tape, false);
                let x = tape.constant(pobs);
                let dist = policy.forward(&mut tape, &vars, x)?;
                let probs = Tensor::new(q.shape(), dist.probs(&tape)?)?;
                values.extend(value_discrete(&q, &probs)?);
                q_chosen.extend(a.iter().enumerate().map(|(r, &a)| q.row(r)[a]));
            }
            acts @ Actions::Continuous { .. } => {
                q_chosen.extend(q_values_continuous(critic, obs.clone(), &acts, &psi)?);
                values.extend(value_continuous_mc(critic, policy, &obs, &pobs, &psi, cfg.mc_samples, rng)?);
            }
        }
    }
    let raw = advantage(&q_chosen, &values, false)?;
    let advantages = if cfg.normalize_advantages {
        normalize_advantages(&raw)
    } else {
        raw.clone()
    };
    Ok(AdvantageEstimate {
        q_chosen,
        values,
        raw,
        advantages,
    })
}
