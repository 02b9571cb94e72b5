use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Swish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("mlp needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("mlp layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `[in×out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// `Linear → [LayerNorm] → swish` for each hidden width, then a plain
/// linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Linear>,
    norms: Vec<Norm>,
}

/// Tape handles for one binding of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    norms: Vec<(Var, Var)>,
}

impl MlpVars {
    /// Handles in [`Mlp::params`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push(*w);
            out.push(*b);
            if let Some((g, nb)) = self.norms.get(i) {
                out.push(*g);
                out.push(*nb);
            }
        }
        out
    }
}

impl Mlp {
    /// Orthogonal hidden weights with gain √2, output weights with
    /// `output_gain`, zero biases, unit layer-norm gains.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, output_gain: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(config.output_dim);
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut norms = Vec::new();
        for i in 0..n_layers {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let gain = if i + 1 == n_layers {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let w = orthogonal(fan_in, fan_out, gain, rng);
            layers.push(Linear {
                weight: Tensor::new(&[fan_in, fan_out], w)?,
                bias: Tensor::zeros(&[fan_out]),
            });
            if config.layer_norm && i + 1 < n_layers {
                norms.push(Norm {
                    gain: Tensor::full(&[fan_out], 1.0),
                    bias: Tensor::zeros(&[fan_out]),
                });
            }
        }
        Ok(Self { config, layers, norms })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Parameters in a fixed order: per layer `weight, bias[, ln_gain, ln_bias]`.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("l{i}.weight"), &l.weight));
            out.push((format!("l{i}.bias"), &l.bias));
            if let Some(n) = self.norms.get(i) {
                out.push((format!("l{i}.ln_gain"), &n.gain));
                out.push((format!("l{i}.ln_bias"), &n.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = norms.next() {
                out.push(&mut n.gain);
                out.push(&mut n.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Puts the parameters on `tape`, tracked when `track` is set.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> MlpVars {
        let mut put = |t: &Tensor| if track { tape.param(t) } else { tape.constant(t.clone()) };
        let layers = self.layers.iter().map(|l| (put(&l.weight), put(&l.bias))).collect();
        let norms = self.norms.iter().map(|n| (put(&n.gain), put(&n.bias))).collect();
        MlpVars { layers, norms }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<Var> {
        match tape.shape(x) {
            [_, w] if *w == self.config.input_dim => {}
            s => return shape_err(format!("mlp expects input [B×{}], got {:?}", self.config.input_dim, s)),
        }
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if i < last {
                if let Some(&(g, nb)) = vars.norms.get(i) {
                    h = tape.layer_norm(h, g, nb)?;
                }
                h = match self.config.activation {
                    Activation::Swish => tape.swish(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Forward pass with constant parameters, returning plain values.
    pub fn eval(&self, input: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(input);
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    /// Overwrites parameters from `(name, tensor)` pairs produced by
    /// [`Mlp::params`] under `prefix`.
    pub fn load(&mut self, prefix: &str, tensors: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.params().into_iter().map(|(n, _)| format!("{prefix}{n}")).collect();
        for (name, slot) in names.iter().zip(self.params_mut()) {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}
