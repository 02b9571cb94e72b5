//! Deterministic-policy evaluation on a dedicated environment stream.

use cppo_core::envs::{EnvConfig, VecEnv};
use cppo_core::rng::Purpose;
use cppo_core::spaces::Actions;

use crate::agent::Agent;
use crate::error::{HarnessError, Result};
use crate::stats::wilson_interval;

/// Parallel instances used for evaluation.
pub const EVAL_INSTANCES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
    pub win_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Runs exactly `episodes` episodes, split evenly over up to
/// [`EVAL_INSTANCES`] instances seeded from the evaluation stream, and
/// counts successes. `act` maps the current environment state to one
/// action per agent row.
pub fn run_episodes(
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut act: impl FnMut(&VecEnv) -> Result<Actions>,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(HarnessError::config("evaluation needs at least one episode"));
    }
    let m = episodes.min(EVAL_INSTANCES);
    let mut envs = VecEnv::new(env_cfg, m, seed, Purpose::EvalEnv)?;
    let mut quota: Vec<usize> = (0..m).map(|i| episodes / m + usize::from(i < episodes % m)).collect();
    let mut successes = 0;
    while quota.iter().any(|&q| q > 0) {
        let actions = act(&envs)?;
        let step = envs.step(&actions)?;
        for (i, q) in quota.iter_mut().enumerate() {
            if step.dones[i] && *q > 0 {
                *q -= 1;
                successes += usize::from(step.successes[i]);
            }
        }
    }
    let (ci_low, ci_high) = wilson_interval(successes, episodes);
    Ok(EvalResult {
        episodes,
        successes,
        win_rate: successes as f64 / episodes as f64,
        ci_low,
        ci_high,
    })
}

/// Win rate of the agent's deterministic policy (argmax or mean action).
pub fn evaluate(agent: &Agent, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    run_episodes(env_cfg, episodes, seed, |envs| {
        let dims = agent.dims();
        if envs.obs_dim() != dims.obs_dim || envs.goal_dim() != dims.goal_dim || envs.agents() != dims.agents {
            return Err(HarnessError::Runtime(format!(
                "policy expects obs {}×{} with goal width {}, environment gives {}×{} with goal width {}",
                dims.agents,
                dims.obs_dim,
                dims.goal_dim,
                envs.agents(),
                envs.obs_dim(),
                envs.goal_dim()
            )));
        }
        let inputs = agent.policy_inputs(&envs.observe(), &envs.target_goals());
        let (tape, dist) = agent.act_dist(inputs)?;
        Ok(dist.mode(&tape))
    })
}
