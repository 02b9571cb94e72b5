use crate::diffcore::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::spaces::Actions;

/// On-policy rollout storage.
///
/// Rows are `(environment, agent)` pairs, row `env·agent_count + agent`,
/// each holding `steps` consecutive transitions. Transition `(row, t)` has
/// flat index `row·steps + t`.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub rows: usize,
    pub steps: usize,
    pub agent_count: usize,
    pub obs_dim: usize,
    pub policy_obs_dim: usize,
    pub goal_dim: usize,
    /// Raw observation `o_t` per transition, as the encoders see it.
    pub obs: Vec<f64>,
    /// Policy input per transition: observation, goal features, agent id.
    pub policy_obs: Vec<f64>,
    /// Actions as sampled (continuous actions before clamping).
    pub actions: Actions,
    pub old_log_probs: Vec<f64>,
    /// `dones[i]` marks transition `i` as the last of its episode.
    pub dones: Vec<bool>,
    /// Achieved-goal features of the observation that follows transition
    /// `i` (the terminal observation when `dones[i]`).
    pub next_achieved_goal: Vec<f64>,
    /// Episode identity used to mask same-trajectory negatives.
    pub trajectory_ids: Vec<u64>,
    /// Target goal features `g*` in force at each transition.
    pub goal_star: Vec<f64>,
    /// Environment rewards; present only for reward-based modes.
    pub rewards: Option<Vec<f64>>,
    /// Value estimates `[rows×(steps+1)]` including the bootstrap entry.
    pub values: Option<Vec<f64>>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rows * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, t: usize) -> usize {
        row * self.steps + t
    }

    /// Checks every per-transition array against `rows × steps`.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyBatch("trajectory batch has no transitions".into()));
        }
        let checks = [
            ("obs", self.obs.len(), n * self.obs_dim),
            ("policy_obs", self.policy_obs.len(), n * self.policy_obs_dim),
            ("actions", self.actions.len(), n),
            ("old_log_probs", self.old_log_probs.len(), n),
            ("dones", self.dones.len(), n),
            ("next_achieved_goal", self.next_achieved_goal.len(), n * self.goal_dim),
            ("trajectory_ids", self.trajectory_ids.len(), n),
            ("goal_star", self.goal_star.len(), n * self.goal_dim),
        ];
        for (name, got, want) in checks {
            if got != want {
                return shape_err(format!("batch field `{name}` has {got} entries, expected {want}"));
            }
        }
        if let Some(r) = &self.rewards {
            if r.len() != n {
                return shape_err(format!("batch rewards have {} entries, expected {n}", r.len()));
            }
        }
        if let Some(v) = &self.values {
            if v.len() != self.rows * (self.steps + 1) {
                return shape_err(format!("batch values have {} entries", v.len()));
            }
        }
        if self.old_log_probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rollout log-probabilities"));
        }
        Ok(())
    }

    fn gather(src: &[f64], width: usize, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        Tensor::new(&[idx.len(), width], data)
    }

    /// Encoder observations `[idx.len()×obs_dim]`.
    pub fn obs_rows(&self, idx: &[usize]) -> Result<Tensor> {
        Self::gather(&self.obs, self.obs_dim, idx)
    }

    /// Policy inputs `[idx.len()×policy_obs_dim]`.
    pub fn policy_obs_rows(&self, idx: &[usize]) -> Result<Tensor> {
        Self::gather(&self.policy_obs, self.policy_obs_dim, idx)
    }

    /// Target goals `[idx.len()×goal_dim]`.
    pub fn goal_star_rows(&self, idx: &[usize]) -> Result<Tensor> {
        Self::gather(&self.goal_star, self.goal_dim, idx)
    }

    pub fn next_achieved(&self, i: usize) -> &[f64] {
        &self.next_achieved_goal[i * self.goal_dim..(i + 1) * self.goal_dim]
    }
}
