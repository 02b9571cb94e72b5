//! Vectorized desk-scale environments: a MiniGrid-style empty room, a
//! continuous point reacher, and a multi-agent Connector-style routing task.

mod connector;
mod grid;
mod point;
mod vec_env;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spaces::ActionSpace;

pub use connector::{ConnectorEnv, ConnectorGoal, ConnectorReward, CONNECTOR_ACTIONS, CONNECTOR_HORIZON_CAP};
pub use grid::{GridEnv, GridReward, GRID_ACTIONS, GRID_VIEW, HEADINGS};
pub use point::{PointEnv, POINT_ARENA, POINT_DT, POINT_SUCCESS_RADIUS};
pub use vec_env::{BatchStep, VecEnv};

/// Actions for the agents of one environment instance.
#[derive(Debug, Clone, Copy)]
pub enum AgentActions<'a> {
    Discrete(&'a [usize]),
    /// `agents × dim`, already clamped to the action box.
    Continuous(&'a [f64]),
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// One entry per agent.
    pub rewards: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// One environment instance. Randomness comes only from the stream passed
/// to `reset`, so instances evolve independently of each other.
pub trait Env: Send {
    fn agents(&self) -> usize;
    /// Per-agent observation width.
    fn obs_dim(&self) -> usize;
    /// Per-agent achieved-goal width.
    fn goal_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn reset(&mut self, rng: &mut StreamRng);
    /// Writes `agents × obs_dim` values.
    fn observe(&self, out: &mut [f64]);
    /// Writes `agents × goal_dim` achieved-goal features `m_g(o)`.
    fn achieved_goal(&self, out: &mut [f64]);
    /// Writes `agents × goal_dim` target features `g*`.
    fn target_goal(&self, out: &mut [f64]);
    fn step(&mut self, actions: AgentActions<'_>) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Grid,
    PointReach,
    Connector,
}

/// Environment selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    /// Grid side length (grid and connector).
    pub size: usize,
    /// Agent count (connector).
    pub agents: usize,
    pub reward_variant: Option<String>,
    pub goal_variant: Option<String>,
    /// Episode step limit; each environment has its own default.
    pub horizon: Option<usize>,
    /// Connector view radius.
    pub obs_radius: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: EnvName::Grid,
            size: 8,
            agents: 1,
            reward_variant: None,
            goal_variant: None,
            horizon: None,
            obs_radius: 2,
        }
    }
}

impl EnvConfig {
    pub fn reward_variants(&self) -> &'static [&'static str] {
        match self.name {
            EnvName::Grid => &["sparse", "shaped"],
            EnvName::PointReach => &["negative_distance"],
            EnvName::Connector => &["dense", "negative_distance", "on_connection", "sparse"],
        }
    }

    pub fn goal_variants(&self) -> &'static [&'static str] {
        match self.name {
            EnvName::Grid | EnvName::PointReach => &["position"],
            EnvName::Connector => &["distance", "total_distance", "all_connected", "target_positions"],
        }
    }

    pub fn reward_or_default(&self) -> &str {
        self.reward_variant.as_deref().unwrap_or(self.reward_variants()[0])
    }

    pub fn goal_or_default(&self) -> &str {
        self.goal_variant.as_deref().unwrap_or(self.goal_variants()[0])
    }

    pub fn horizon_or_default(&self) -> usize {
        self.horizon.unwrap_or(match self.name {
            EnvName::Grid => 4 * self.size * self.size,
            EnvName::PointReach => 50,
            EnvName::Connector => (self.size * self.size).min(CONNECTOR_HORIZON_CAP),
        })
    }

    /// Every violated constraint, prefixed with `env.`.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(r) = &self.reward_variant {
            if !self.reward_variants().contains(&r.as_str()) {
                v.push(format!(
                    "env.reward_variant `{r}` is not one of {:?} for {:?}",
                    self.reward_variants(),
                    self.name
                ));
            }
        }
        if let Some(g) = &self.goal_variant {
            if !self.goal_variants().contains(&g.as_str()) {
                v.push(format!(
                    "env.goal_variant `{g}` is not one of {:?} for {:?}",
                    self.goal_variants(),
                    self.name
                ));
            }
        }
        if self.horizon == Some(0) {
            v.push("env.horizon must be positive".to_string());
        }
        match self.name {
            EnvName::Grid => {
                if self.size < 2 {
                    v.push(format!("env.size must be at least 2 for grid, got {}", self.size));
                }
                if self.agents != 1 {
                    v.push("env.agents must be 1 for grid".to_string());
                }
            }
            EnvName::PointReach => {
                if self.agents != 1 {
                    v.push("env.agents must be 1 for point_reach".to_string());
                }
            }
            EnvName::Connector => {
                if self.size < 3 {
                    v.push(format!("env.size must be at least 3 for connector, got {}", self.size));
                }
                if self.agents == 0 || 3 * self.agents > self.size * self.size {
                    v.push(format!(
                        "env.agents = {} does not fit a {}×{} connector grid",
                        self.agents, self.size, self.size
                    ));
                }
            }
        }
        v
    }

    pub fn build(&self) -> Result<Box<dyn Env>> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        let horizon = self.horizon_or_default();
        Ok(match self.name {
            EnvName::Grid => Box::new(GridEnv::new(self.size, horizon, GridReward::parse(self.reward_or_default())?)),
            EnvName::PointReach => Box::new(PointEnv::new(horizon)),
            EnvName::Connector => Box::new(ConnectorEnv::new(
                self.size,
                self.agents,
                horizon,
                self.obs_radius,
                ConnectorReward::parse(self.reward_or_default())?,
                ConnectorGoal::parse(self.goal_or_default())?,
            )),
        })
    }
}
