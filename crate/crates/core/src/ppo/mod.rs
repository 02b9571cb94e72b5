//! Clipped-surrogate policy optimization, the reward-based GAE baseline,
//! Adam, and the per-epoch minibatch machinery.

mod adam;
mod batch;
mod loss;
mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{clip_grad_norm, Adam, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batch::TrajectoryBatch;
pub use loss::{clipped_policy_loss, gae, value_loss, ClipStats};
pub use update::{update_epoch, CriticUpdate, EpochStats, LearningRates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    /// Transitions per policy minibatch; the count follows from the
    /// rollout size.
    pub minibatch_size: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_schedule: LrSchedule,
    pub lr_end: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 1,
            minibatch_size: 256,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            lr_actor: 2.5e-4,
            lr_critic: 2.5e-4,
            lr_schedule: LrSchedule::Constant,
            lr_end: 1e-7,
        }
    }
}

impl PpoConfig {
    /// Every violated constraint, prefixed with `ppo.`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            v.push(format!("ppo.clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            v.push(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            v.push(format!("ppo.gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if self.epochs == 0 {
            v.push("ppo.epochs must be at least 1".to_string());
        }
        if self.minibatch_size == 0 {
            v.push("ppo.minibatch_size must be positive".to_string());
        }
        if !(self.max_grad_norm > 0.0) {
            v.push("ppo.max_grad_norm must be positive".to_string());
        }
        for (name, lr) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_end", self.lr_end),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                v.push(format!("ppo.{name} must be a non-negative number, got {lr}"));
            }
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            v.push("ppo.entropy_coef and ppo.value_coef must be non-negative".to_string());
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
