//! Run configuration: JSON files, named presets and dotted `key=value`
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cppo_core::contrastive::ContrastiveConfig;
use cppo_core::envs::{EnvConfig, EnvName};
use cppo_core::nets::DESK_HIDDEN;
use cppo_core::ppo::PpoConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cppo,
    Icppo,
    Ppo,
    Ippo,
}

impl Mode {
    pub fn is_contrastive(self) -> bool {
        matches!(self, Mode::Cppo | Mode::Icppo)
    }

    pub fn is_multi_agent(self) -> bool {
        matches!(self, Mode::Icppo | Mode::Ippo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: DESK_HIDDEN.to_vec(),
            layer_norm: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugConfig {
    /// Overwrite collected rewards with NaN in contrastive modes.
    pub poison_rewards: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub contrastive: ContrastiveConfig,
    #[serde(default = "defaults::total_updates")]
    pub total_updates: usize,
    #[serde(default = "defaults::rollout_length")]
    pub rollout_length: usize,
    #[serde(default = "defaults::parallel_envs")]
    pub parallel_envs: usize,
    /// Updates between evaluations; a final evaluation always runs.
    #[serde(default = "defaults::eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Threads stepping environments during collection.
    #[serde(default = "defaults::workers")]
    pub workers: usize,
    #[serde(default)]
    pub debug: DebugConfig,
}

mod defaults {
    pub fn total_updates() -> usize {
        500
    }
    pub fn rollout_length() -> usize {
        128
    }
    pub fn parallel_envs() -> usize {
        64
    }
    pub fn eval_interval() -> usize {
        50
    }
    pub fn eval_episodes() -> usize {
        128
    }
    pub fn workers() -> usize {
        1
    }
}

/// Base values merged under a config's own keys when it names a preset.
pub fn preset(name: &str) -> Result<Value> {
    match name {
        "desk" => Ok(serde_json::json!({})),
        "paper" => Ok(serde_json::json!({
            "net": { "hidden": [512, 512, 512, 512], "layer_norm": true },
            "ppo": {
                "clip_eps": 0.2, "epochs": 1, "minibatch_size": 256, "gamma": 0.99,
                "max_grad_norm": 0.5, "lr_actor": 2.5e-4, "lr_critic": 2.5e-4,
                "lr_schedule": "cosine", "lr_end": 1e-7
            },
            "contrastive": { "repr_dim": 64, "batch_size": 256 },
            "rollout_length": 128,
            "parallel_envs": 512,
            "total_updates": 1250,
            "eval_interval": 16,
            "eval_episodes": 2048
        })),
        other => Err(HarnessError::config(format!(
            "unknown preset `{other}` (expected desk or paper)"
        ))),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets `a.b.c = value`; `value` is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::config(format!("override key `{key}` is malformed")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .unwrap()
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds a config from JSON plus overrides, resolving `preset` first.
    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(obj) = value.as_object_mut() {
            if let Some(p) = obj.remove("preset") {
                let name = p.as_str().ok_or_else(|| HarnessError::config("preset must be a string"))?;
                let mut base = preset(name)?;
                merge(&mut base, value);
                value = base;
            }
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| HarnessError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str, overrides: &[String]) -> Result<Self> {
        let v: Value = serde_json::from_str(s).map_err(|e| HarnessError::config(format!("config is not valid JSON: {e}")))?;
        Self::from_value(v, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.env.violations();
        v.extend(self.ppo.violations());
        v.extend(self.contrastive.violations());
        if self.mode.is_contrastive() && self.env.goal_variant.is_none() {
            v.push(format!("mode {:?} needs env.goal_variant", self.mode).to_lowercase());
        }
        if !self.mode.is_contrastive() && self.env.reward_variant.is_none() {
            v.push(format!("mode {:?} needs env.reward_variant", self.mode).to_lowercase());
        }
        match (self.mode.is_multi_agent(), self.env.name) {
            (true, EnvName::Connector) | (false, EnvName::Grid | EnvName::PointReach) => {}
            (true, _) => v.push("multi-agent modes (icppo, ippo) run on the connector environment".to_string()),
            (false, EnvName::Connector) => {
                v.push("single-agent modes (cppo, ppo) do not run on the connector environment".to_string())
            }
        }
        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) {
            v.push("net.hidden must be a non-empty list of positive widths".to_string());
        }
        for (name, val) in [
            ("total_updates", self.total_updates),
            ("rollout_length", self.rollout_length),
            ("parallel_envs", self.parallel_envs),
            ("eval_interval", self.eval_interval),
            ("workers", self.workers),
        ] {
            if val == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(v))
        }
    }

    /// Environment steps per update, counting every agent.
    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_length * self.parallel_envs * self.env.agents) as u64
    }
}
