use std::rc::Rc;

use super::RelabeledBatch;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::nets::{EncoderParams, EncoderVars};
use crate::ppo::TrajectoryBatch;
use crate::spaces::Actions;

/// Forward InfoNCE with negative-L2 energy.
///
/// Row `i` of `psi` is the positive for row `i` of `phi`. The softmax
/// denominator of row `i` holds the positive plus every `j` from a
/// different trajectory; same-trajectory non-positives are masked out.
pub fn infonce_loss(tape: &mut Tape, phi: Var, psi: Var, trajectory_id: &[u64]) -> Result<Var> {
    let n = tape.shape(phi)[0];
    if n == 0 || trajectory_id.is_empty() {
        return Err(Error::EmptyBatch("infonce over zero pairs".into()));
    }
    if trajectory_id.len() != n || tape.shape(psi)[0] != n {
        return shape_err(format!(
            "infonce: {n} state-action rows, {} goal rows, {} trajectory ids",
            tape.shape(psi)[0],
            trajectory_id.len()
        ));
    }
    let mut mask = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            mask.push(i == j || trajectory_id[i] != trajectory_id[j]);
        }
    }
    let dist = tape.pairwise_dist(phi, psi)?;
    let logits = tape.neg(dist)?;
    let log_probs = tape.masked_log_softmax(logits, Rc::from(mask))?;
    let diag: Rc<[usize]> = (0..n).collect();
    let positives = tape.gather_cols(log_probs, diag)?;
    let mean = tape.mean(positives)?;
    tape.neg(mean)
}

/// `φ(o, a)` for the given observations and actions, `[B×d]`. Continuous
/// actions are clamped to the action box first.
pub fn state_action_embeddings(
    critic: &EncoderParams,
    tape: &mut Tape,
    vars: &EncoderVars,
    obs: Tensor,
    actions: &Actions,
) -> Result<Var> {
    let rows = obs.shape()[0];
    let obs = tape.constant(obs);
    match actions {
        Actions::Discrete(a) => {
            let all = critic.encode_sa_discrete(tape, vars, obs)?;
            tape.select_blocks(all, Rc::from(a.as_slice()))
        }
        Actions::Continuous { data, dim } => {
            let clamped: Vec<f64> = data.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let act = tape.constant(Tensor::new(&[rows, *dim], clamped)?);
            critic.encode_sa_continuous(tape, vars, obs, act)
        }
    }
}

/// InfoNCE over the relabeled pairs at positions `idx`.
pub fn infonce_minibatch_loss(
    critic: &EncoderParams,
    tape: &mut Tape,
    vars: &EncoderVars,
    batch: &TrajectoryBatch,
    relabeled: &RelabeledBatch,
    idx: &[usize],
) -> Result<Var> {
    let flat: Vec<usize> = idx
        .iter()
        .map(|&i| {
            let (row, t) = relabeled.sa_index[i];
            batch.index(row, t)
        })
        .collect();
    let obs = batch.obs_rows(&flat)?;
    let actions = batch.actions.gather(&flat);
    let phi = state_action_embeddings(critic, tape, vars, obs, &actions)?;
    let gd = relabeled.goal_dim;
    let mut goals = Vec::with_capacity(idx.len() * gd);
    for &i in idx {
        goals.extend_from_slice(relabeled.goal(i));
    }
    let goals = tape.constant(Tensor::new(&[idx.len(), gd], goals)?);
    let psi = critic.encode_goal(tape, vars, goals)?;
    let traj: Vec<u64> = idx.iter().map(|&i| relabeled.trajectory_id[i]).collect();
    infonce_loss(tape, phi, psi, &traj)
}
