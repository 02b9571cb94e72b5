use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, Mlp, MlpConfig, MlpVars};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::spaces::{ActionSpace, Actions};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Output-layer gain for the policy head.
pub const POLICY_HEAD_GAIN: f64 = 0.01;

/// Policy trunk plus head. The MLP's output layer is the head: `|A|` logits
/// for discrete spaces, the action mean for continuous ones (with a
/// state-independent `log_std`).
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub net: Mlp,
    pub log_std: Option<Tensor>,
    space: ActionSpace,
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub net: MlpVars,
    pub log_std: Option<Var>,
}

impl PolicyVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.net.all();
        v.extend(self.log_std);
        v
    }
}

/// Distribution parameters produced by a policy forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Dist {
    Categorical {
        logits: Var,
        log_probs: Var,
    },
    /// `log_std` is clamped to `[LOG_STD_MIN, LOG_STD_MAX]` and broadcast to `[B×k]`.
    Gaussian {
        mean: Var,
        log_std: Var,
    },
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        space: ActionSpace,
        rng: &mut R,
    ) -> Result<Self> {
        let output_dim = match space {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        };
        let config = MlpConfig {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Swish,
            layer_norm,
        };
        let net = Mlp::new(config, POLICY_HEAD_GAIN, rng)?;
        let log_std = match space {
            ActionSpace::Discrete(_) => None,
            ActionSpace::Continuous(k) => Some(Tensor::zeros(&[k])),
        };
        Ok(Self { net, log_std, space })
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn input_dim(&self) -> usize {
        self.net.config().input_dim
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.net.params();
        if let Some(ls) = &self.log_std {
            p.push(("log_std".to_string(), ls));
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.net.params_mut();
        if let Some(ls) = &mut self.log_std {
            p.push(ls);
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn load(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        self.net.load(prefix, tensors)?;
        if let Some(ls) = &mut self.log_std {
            let name = format!("{prefix}log_std");
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != ls.shape() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}", t.shape())));
            }
            ls.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> PolicyVars {
        let net = self.net.bind(tape, track);
        let log_std = self
            .log_std
            .as_ref()
            .map(|t| if track { tape.param(t) } else { tape.constant(t.clone()) });
        PolicyVars { net, log_std }
    }

    /// `obs_goal` is `[B×input_dim]`: the observation with goal features
    /// (and agent id, if any) already appended.
    pub fn forward(&self, tape: &mut Tape, vars: &PolicyVars, obs_goal: Var) -> Result<Dist> {
        let out = self.net.forward(tape, &vars.net, obs_goal)?;
        match self.space {
            ActionSpace::Discrete(_) => {
                let log_probs = tape.log_softmax(out)?;
                Ok(Dist::Categorical { logits: out, log_probs })
            }
            ActionSpace::Continuous(_) => {
                let ls = vars.log_std.expect("continuous policy carries log_std");
                let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)?;
                let rows = tape.shape(out)[0];
                let log_std = tape.broadcast_rows(ls, rows)?;
                Ok(Dist::Gaussian { mean: out, log_std })
            }
        }
    }
}

impl Dist {
    /// Log-probability of each row's action: `[B]`.
    pub fn log_prob(&self, tape: &mut Tape, actions: &Actions) -> Result<Var> {
        match (*self, actions) {
            (Dist::Categorical { log_probs, .. }, Actions::Discrete(a)) => {
                let idx: Rc<[usize]> = a.clone().into();
                tape.gather_cols(log_probs, idx)
            }
            (Dist::Gaussian { mean, log_std }, Actions::Continuous { data, dim }) => {
                let shape = tape.shape(mean).to_vec();
                if shape[1] != *dim {
                    return shape_err(format!("action width {dim} vs policy width {}", shape[1]));
                }
                let a = tape.constant(Tensor::new(&shape, data.clone())?);
                let diff = tape.sub(a, mean)?;
                let neg_ls = tape.neg(log_std)?;
                let inv_std = tape.exp(neg_ls)?;
                let z = tape.mul(diff, inv_std)?;
                let z2 = tape.mul(z, z)?;
                let half = tape.scale(z2, -0.5)?;
                let per = tape.sub(half, log_std)?;
                let s = tape.row_sum(per)?;
                tape.add_scalar(s, -0.5 * (2.0 * PI).ln() * *dim as f64)
            }
            _ => Err(Error::Contract("action kind does not match the policy head".into())),
        }
    }

    /// Per-row entropy: `[B]`.
    pub fn entropy(&self, tape: &mut Tape) -> Result<Var> {
        match *self {
            Dist::Categorical { log_probs, .. } => {
                let p = tape.exp(log_probs)?;
                let plp = tape.mul(p, log_probs)?;
                let s = tape.row_sum(plp)?;
                tape.neg(s)
            }
            Dist::Gaussian { log_std, .. } => {
                let k = tape.shape(log_std)[1] as f64;
                let s = tape.row_sum(log_std)?;
                tape.add_scalar(s, k * 0.5 * (1.0 + (2.0 * PI).ln()))
            }
        }
    }

    /// Per-row action probabilities (discrete only).
    pub fn probs(&self, tape: &Tape) -> Result<Vec<f64>> {
        match *self {
            Dist::Categorical { log_probs, .. } => Ok(tape.data(log_probs).iter().map(|v| v.exp()).collect()),
            Dist::Gaussian { .. } => Err(Error::Contract("probs() needs a categorical policy".into())),
        }
    }

    /// Draws one action per row.
    pub fn sample<R: Rng + ?Sized>(&self, tape: &Tape, rng: &mut R) -> Actions {
        match *self {
            Dist::Categorical { log_probs, .. } => {
                let n = tape.value(log_probs).last_dim();
                let acts = tape
                    .data(log_probs)
                    .chunks(n)
                    .map(|row| {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        for (j, lp) in row.iter().enumerate() {
                            acc += lp.exp();
                            if u < acc {
                                return j;
                            }
                        }
                        n - 1
                    })
                    .collect();
                Actions::Discrete(acts)
            }
            Dist::Gaussian { mean, log_std } => {
                let dim = tape.value(mean).last_dim();
                let data = tape
                    .data(mean)
                    .iter()
                    .zip(tape.data(log_std))
                    .map(|(m, ls)| {
                        let e: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * e
                    })
                    .collect();
                Actions::Continuous { data, dim }
            }
        }
    }

    /// Deterministic action: argmax of the logits or the mean.
    pub fn mode(&self, tape: &Tape) -> Actions {
        match *self {
            Dist::Categorical { logits, .. } => {
                let n = tape.value(logits).last_dim();
                let acts = tape
                    .data(logits)
                    .chunks(n)
                    .map(|row| {
                        let mut best = 0;
                        for j in 1..n {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                Actions::Discrete(acts)
            }
            Dist::Gaussian { mean, .. } => Actions::Continuous {
                data: tape.data(mean).to_vec(),
                dim: tape.value(mean).last_dim(),
            },
        }
    }
}
