//! The learnable parts of a run: one shared policy and one shared critic,
//! whatever the agent count.

use std::path::Path;

use rand::Rng;

use cppo_core::diffcore::{load_checkpoint, save_checkpoint, Tape, Tensor};
use cppo_core::envs::VecEnv;
use cppo_core::nets::{Activation, Dist, EncoderParams, Mlp, MlpConfig, PolicyParams};
use cppo_core::spaces::ActionSpace;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

/// Shapes an environment presents to the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvDims {
    pub agents: usize,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub space: ActionSpace,
}

impl EnvDims {
    pub fn of(envs: &VecEnv) -> Self {
        Self {
            agents: envs.agents(),
            obs_dim: envs.obs_dim(),
            goal_dim: envs.goal_dim(),
            space: envs.action_space(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Critic {
    Contrastive(EncoderParams),
    /// State-value MLP for the reward-based baseline.
    Value(Mlp),
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: PolicyParams,
    pub critic: Critic,
    dims: EnvDims,
    agent_ids: bool,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, dims: EnvDims, rng: &mut R) -> Result<Self> {
        let agent_ids = cfg.mode.is_multi_agent() && dims.agents > 1;
        let policy_in = dims.obs_dim + dims.goal_dim + if agent_ids { dims.agents } else { 0 };
        let policy = PolicyParams::new(policy_in, &cfg.net.hidden, cfg.net.layer_norm, dims.space, rng)?;
        let critic = if cfg.mode.is_contrastive() {
            Critic::Contrastive(EncoderParams::new(
                dims.obs_dim,
                dims.goal_dim,
                &cfg.net.hidden,
                cfg.net.layer_norm,
                cfg.contrastive.repr_dim,
                dims.space,
                rng,
            )?)
        } else {
            let config = MlpConfig {
                input_dim: policy_in,
                hidden: cfg.net.hidden.clone(),
                output_dim: 1,
                activation: Activation::Swish,
                layer_norm: cfg.net.layer_norm,
            };
            Critic::Value(Mlp::new(config, 1.0, rng)?)
        };
        Ok(Self {
            policy,
            critic,
            dims,
            agent_ids,
        })
    }

    pub fn dims(&self) -> EnvDims {
        self.dims
    }

    pub fn policy_input_dim(&self) -> usize {
        self.policy.input_dim()
    }

    /// Policy rows `obs ++ g* ++ agent one-hot` for instance-major arrays
    /// `obs [M×n×obs_dim]` and `goals [M×n×goal_dim]`.
    pub fn policy_inputs(&self, obs: &[f64], goals: &[f64]) -> Vec<f64> {
        let EnvDims {
            agents,
            obs_dim,
            goal_dim,
            ..
        } = self.dims;
        let rows = obs.len() / obs_dim;
        let mut out = Vec::with_capacity(rows * self.policy_input_dim());
        for r in 0..rows {
            out.extend_from_slice(&obs[r * obs_dim..(r + 1) * obs_dim]);
            out.extend_from_slice(&goals[r * goal_dim..(r + 1) * goal_dim]);
            if self.agent_ids {
                let id = r % agents;
                out.extend((0..agents).map(|j| if j == id { 1.0 } else { 0.0 }));
            }
        }
        out
    }

    /// Policy distribution over `rows` inputs, evaluated without tracking.
    pub fn act_dist(&self, inputs: Vec<f64>) -> Result<(Tape, Dist)> {
        let rows = inputs.len() / self.policy_input_dim();
        let mut tape = Tape::new();
        let vars = self.policy.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(&[rows, self.policy_input_dim()], inputs)?);
        let dist = self.policy.forward(&mut tape, &vars, x)?;
        Ok((tape, dist))
    }

    /// Total learnable scalars across policy and critic.
    pub fn param_count(&self) -> usize {
        self.policy.param_count()
            + match &self.critic {
                Critic::Contrastive(e) => e.param_count(),
                Critic::Value(v) => v.param_count(),
            }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p: Vec<_> = self
            .policy
            .params()
            .into_iter()
            .map(|(n, t)| (format!("policy.{n}"), t))
            .collect();
        let critic = match &self.critic {
            Critic::Contrastive(e) => e.params(),
            Critic::Value(v) => v.params(),
        };
        p.extend(critic.into_iter().map(|(n, t)| (format!("critic.{n}"), t)));
        p
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(path, &self.named_params())?)
    }

    /// Loads weights saved by [`Agent::save`]; shape disagreements name both
    /// shapes.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let tensors = load_checkpoint(path)?;
        let wrap =
            |e: cppo_core::Error| HarnessError::Runtime(format!("checkpoint {} does not fit this config: {e}", path.display()));
        self.policy.load("policy.", &tensors).map_err(wrap)?;
        match &mut self.critic {
            Critic::Contrastive(e) => e.load("critic.", &tensors).map_err(wrap)?,
            Critic::Value(v) => v.load("critic.", &tensors).map_err(wrap)?,
        }
        Ok(())
    }
}
