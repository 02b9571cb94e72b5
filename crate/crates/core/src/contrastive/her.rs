use rand::Rng;

use super::{ContrastiveConfig, HerStrategy};
use crate::error::{Error, Result};
use crate::ppo::TrajectoryBatch;

/// Transitions paired with goals reached later in the same episode.
#[derive(Debug, Clone)]
pub struct RelabeledBatch {
    /// `(row, t)` of each relabeled transition.
    pub sa_index: Vec<(usize, usize)>,
    /// Timestep of the observation whose achieved goal was used.
    pub goal_time: Vec<usize>,
    /// `[len×goal_dim]`
    pub positive_goal: Vec<f64>,
    pub goal_dim: usize,
    pub trajectory_id: Vec<u64>,
}

impl RelabeledBatch {
    pub fn len(&self) -> usize {
        self.sa_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sa_index.is_empty()
    }

    pub fn goal(&self, i: usize) -> &[f64] {
        &self.positive_goal[i * self.goal_dim..(i + 1) * self.goal_dim]
    }
}

/// Draws an offset `k ∈ 1..=k_max`.
///
/// The geometric strategy inverts the CDF of the renormalized law
/// `P(k) = γ^(k−1)(1−γ)/(1−γ^k_max)`.
pub fn sample_future_offset<R: Rng + ?Sized>(strategy: HerStrategy, gamma: f64, k_max: usize, rng: &mut R) -> usize {
    debug_assert!(k_max >= 1);
    if k_max == 1 {
        return 1;
    }
    match strategy {
        HerStrategy::UniformFuture => rng.gen_range(1..=k_max),
        HerStrategy::Geometric => {
            let u: f64 = rng.gen();
            let mass = 1.0 - gamma.powi(k_max as i32);
            let k = ((1.0 - u * mass).ln() / gamma.ln()).ceil();
            (k as usize).clamp(1, k_max)
        }
    }
}

/// Mean of the truncated geometric offset law on `1..=k_max`.
pub fn truncated_geometric_mean(gamma: f64, k_max: usize) -> f64 {
    let norm = 1.0 - gamma.powi(k_max as i32);
    (1..=k_max)
        .map(|k| k as f64 * gamma.powi(k as i32 - 1) * (1.0 - gamma) / norm)
        .sum()
}

/// Relabels every transition of the batch with the achieved goal of a
/// strictly later observation from the same episode.
///
/// The observation `o_{t+k}` is the one that follows transition `t+k−1`,
/// so the segment of transition `t` runs through the first done at or after
/// `t` (or the end of the rollout window).
pub fn her_relabel<R: Rng + ?Sized>(batch: &TrajectoryBatch, cfg: &ContrastiveConfig, rng: &mut R) -> Result<RelabeledBatch> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("no transitions to relabel".into()));
    }
    let n = batch.len();
    let gd = batch.goal_dim;
    let mut out = RelabeledBatch {
        sa_index: Vec::with_capacity(n),
        goal_time: Vec::with_capacity(n),
        positive_goal: Vec::with_capacity(n * gd),
        goal_dim: gd,
        trajectory_id: Vec::with_capacity(n),
    };
    for row in 0..batch.rows {
        // Transition index of the segment end seen from each t, scanning backwards.
        let mut seg_end = vec![0usize; batch.steps];
        let mut end = batch.steps - 1;
        for t in (0..batch.steps).rev() {
            if batch.dones[batch.index(row, t)] {
                end = t;
            }
            seg_end[t] = end;
        }
        for (t, &end) in seg_end.iter().enumerate() {
            let k_max = end - t + 1;
            let k = sample_future_offset(cfg.her_strategy, cfg.her_gamma, k_max, rng);
            let src = batch.index(row, t + k - 1);
            out.sa_index.push((row, t));
            out.goal_time.push(t + k);
            out.positive_goal.extend_from_slice(batch.next_achieved(src));
            out.trajectory_id.push(batch.trajectory_ids[batch.index(row, t)]);
        }
    }
    Ok(out)
}
