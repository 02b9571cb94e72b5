use rand::Rng;

use super::mlp::{Activation, Mlp, MlpConfig, MlpVars};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::spaces::ActionSpace;

/// State-action encoder φ and goal encoder ψ, both into `repr_dim`.
///
/// For discrete spaces φ reads the observation alone and emits one
/// embedding per action; for continuous spaces it reads the observation
/// concatenated with the action.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub sa: Mlp,
    pub goal: Mlp,
    repr_dim: usize,
    space: ActionSpace,
    obs_dim: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub sa: MlpVars,
    pub goal: MlpVars,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.sa.all();
        v.extend(self.goal.all());
        v
    }
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        goal_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        repr_dim: usize,
        space: ActionSpace,
        rng: &mut R,
    ) -> Result<Self> {
        if repr_dim == 0 {
            return Err(Error::Config("representation dimension must be positive".into()));
        }
        let (sa_in, sa_out) = match space {
            ActionSpace::Discrete(n) => (obs_dim, n * repr_dim),
            ActionSpace::Continuous(k) => (obs_dim + k, repr_dim),
        };
        let mk = |input_dim, output_dim| MlpConfig {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Swish,
            layer_norm,
        };
        let sa = Mlp::new(mk(sa_in, sa_out), 1.0, rng)?;
        let goal = Mlp::new(mk(goal_dim, repr_dim), 1.0, rng)?;
        Ok(Self {
            sa,
            goal,
            repr_dim,
            space,
            obs_dim,
        })
    }

    pub fn repr_dim(&self) -> usize {
        self.repr_dim
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal.config().input_dim
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p: Vec<_> = self.sa.params().into_iter().map(|(n, t)| (format!("sa.{n}"), t)).collect();
        p.extend(self.goal.params().into_iter().map(|(n, t)| (format!("goal.{n}"), t)));
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.sa.params_mut();
        p.extend(self.goal.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.sa.param_count() + self.goal.param_count()
    }

    pub fn load(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        self.sa.load(&format!("{prefix}sa."), tensors)?;
        self.goal.load(&format!("{prefix}goal."), tensors)
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> EncoderVars {
        EncoderVars {
            sa: self.sa.bind(tape, track),
            goal: self.goal.bind(tape, track),
        }
    }

    /// `obs [B×obs_dim] → [B×|A|×d]`, all actions in one pass.
    pub fn encode_sa_discrete(&self, tape: &mut Tape, vars: &EncoderVars, obs: Var) -> Result<Var> {
        let ActionSpace::Discrete(n) = self.space else {
            return Err(Error::Contract("encode_sa_discrete called on a continuous critic".into()));
        };
        let flat = self.sa.forward(tape, &vars.sa, obs)?;
        let b = tape.shape(flat)[0];
        tape.reshape(flat, &[b, n, self.repr_dim])
    }

    /// `(obs [B×obs_dim], act [B×k]) → [B×d]`.
    pub fn encode_sa_continuous(&self, tape: &mut Tape, vars: &EncoderVars, obs: Var, act: Var) -> Result<Var> {
        if self.space.is_discrete() {
            return Err(Error::Contract("encode_sa_continuous called on a discrete critic".into()));
        }
        let x = tape.concat_cols(obs, act)?;
        self.sa.forward(tape, &vars.sa, x)
    }

    /// `goal [B×goal_dim] → [B×d]`.
    pub fn encode_goal(&self, tape: &mut Tape, vars: &EncoderVars, goal: Var) -> Result<Var> {
        self.goal.forward(tape, &vars.goal, goal)
    }
}
