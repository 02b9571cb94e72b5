//! Contrastive critic: hindsight relabeling, the InfoNCE objective and
//! advantages derived from the learned goal-conditioned Q-function.

mod advantage;
mod her;
mod infonce;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use advantage::{
    advantage, contrastive_advantages, goal_embeddings, normalize_advantages, q_values_continuous, q_values_discrete,
    value_continuous_mc, value_discrete, AdvantageEstimate, NORM_EPS, PROB_SUM_TOL,
};
pub use her::{her_relabel, sample_future_offset, truncated_geometric_mean, RelabeledBatch};
pub use infonce::{infonce_loss, infonce_minibatch_loss, state_action_embeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    /// `f(x, y) = −‖x − y‖₂`
    #[default]
    NegL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HerStrategy {
    /// Offset `k ≥ 1` with `P(k) ∝ γ^(k−1)`, truncated at the segment end.
    #[default]
    Geometric,
    /// Offset uniform over the remaining segment.
    UniformFuture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub repr_dim: usize,
    pub energy: Energy,
    /// Actions sampled per state for the continuous value estimate.
    pub mc_samples: usize,
    pub her_strategy: HerStrategy,
    pub her_gamma: f64,
    pub normalize_advantages: bool,
    /// Relabeled pairs per InfoNCE step.
    pub batch_size: usize,
    /// Treat agents of one episode as different trajectories, making them
    /// each other's negatives.
    pub agent_negatives: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            repr_dim: crate::nets::DEFAULT_REPR_DIM,
            energy: Energy::NegL2,
            mc_samples: 16,
            her_strategy: HerStrategy::Geometric,
            her_gamma: 0.99,
            normalize_advantages: true,
            batch_size: 256,
            agent_negatives: false,
        }
    }
}

impl ContrastiveConfig {
    /// Every violated constraint, prefixed with `contrastive.`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.repr_dim == 0 {
            v.push("contrastive.repr_dim must be positive".to_string());
        }
        if self.mc_samples == 0 {
            v.push("contrastive.mc_samples must be at least 1".to_string());
        }
        if !(self.her_gamma > 0.0 && self.her_gamma < 1.0) {
            v.push(format!("contrastive.her_gamma must lie in (0, 1), got {}", self.her_gamma));
        }
        if self.batch_size == 0 {
            v.push("contrastive.batch_size must be positive".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}
