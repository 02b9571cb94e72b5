use std::thread;

use super::{AgentActions, Env, EnvConfig};
use crate::error::{shape_err, Result};
use crate::rng::{stream, Purpose, StreamRng};
use crate::spaces::{ActionSpace, Actions};

/// Result of stepping every instance once. Arrays are instance-major, with
/// agents innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStep {
    /// `[M×n]`
    pub rewards: Vec<f64>,
    /// `[M]`
    pub dones: Vec<bool>,
    /// `[M]`
    pub successes: Vec<bool>,
    /// Achieved goals of the post-step observation, taken before any
    /// auto-reset: `[M×n×goal_dim]`.
    pub next_achieved: Vec<f64>,
    /// Post-step observations before any auto-reset: `[M×n×obs_dim]`.
    pub terminal_obs: Vec<f64>,
}

struct Instance {
    env: Box<dyn Env>,
    rng: StreamRng,
    episode: u64,
}

struct InstanceStep {
    rewards: Vec<f64>,
    done: bool,
    success: bool,
    achieved: Vec<f64>,
    obs: Vec<f64>,
}

/// `M` environment instances stepped in lockstep, each with its own random
/// stream. Finished instances reset automatically after reporting their
/// terminal observation.
///
/// With `workers > 1` instances are stepped on scoped threads; results are
/// identical to sequential stepping.
pub struct VecEnv {
    instances: Vec<Instance>,
    workers: usize,
    agents: usize,
    obs_dim: usize,
    goal_dim: usize,
    space: ActionSpace,
}

impl VecEnv {
    /// `m` copies of the configured environment; instance `i` draws from
    /// stream `(purpose, i)` under `seed`.
    pub fn new(config: &EnvConfig, m: usize, seed: u64, purpose: Purpose) -> Result<Self> {
        let envs = (0..m).map(|_| config.build()).collect::<Result<Vec<_>>>()?;
        Self::from_envs(envs, seed, purpose)
    }

    pub fn from_envs(envs: Vec<Box<dyn Env>>, seed: u64, purpose: Purpose) -> Result<Self> {
        let Some(first) = envs.first() else {
            return shape_err("vectorized environment needs at least one instance");
        };
        let (agents, obs_dim, goal_dim, space) = (first.agents(), first.obs_dim(), first.goal_dim(), first.action_space());
        let mut instances: Vec<Instance> = envs
            .into_iter()
            .enumerate()
            .map(|(i, env)| Instance {
                env,
                rng: stream(seed, purpose, i as u64),
                episode: 0,
            })
            .collect();
        for inst in &mut instances {
            inst.env.reset(&mut inst.rng);
        }
        Ok(Self {
            instances,
            workers: 1,
            agents,
            obs_dim,
            goal_dim,
            space,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn goal_dim(&self) -> usize {
        self.goal_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    /// Episodes finished so far by each instance.
    pub fn episode_ids(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.episode).collect()
    }

    pub fn env(&self, i: usize) -> &dyn Env {
        self.instances[i].env.as_ref()
    }

    fn gather(&self, width: usize, f: impl Fn(&dyn Env, &mut [f64])) -> Vec<f64> {
        let per = self.agents * width;
        let mut out = vec![0.0; self.len() * per];
        for (inst, chunk) in self.instances.iter().zip(out.chunks_mut(per)) {
            f(inst.env.as_ref(), chunk);
        }
        out
    }

    /// `[M×n×obs_dim]`
    pub fn observe(&self) -> Vec<f64> {
        self.gather(self.obs_dim, |e, o| e.observe(o))
    }

    /// `[M×n×goal_dim]`
    pub fn achieved_goals(&self) -> Vec<f64> {
        self.gather(self.goal_dim, |e, o| e.achieved_goal(o))
    }

    /// `[M×n×goal_dim]`
    pub fn target_goals(&self) -> Vec<f64> {
        self.gather(self.goal_dim, |e, o| e.target_goal(o))
    }

    fn step_instance(
        inst: &mut Instance,
        actions: AgentActions<'_>,
        agents: usize,
        obs_dim: usize,
        goal_dim: usize,
    ) -> Result<InstanceStep> {
        let out = inst.env.step(actions)?;
        let mut achieved = vec![0.0; agents * goal_dim];
        inst.env.achieved_goal(&mut achieved);
        let mut obs = vec![0.0; agents * obs_dim];
        inst.env.observe(&mut obs);
        if out.done {
            inst.episode += 1;
            inst.env.reset(&mut inst.rng);
        }
        Ok(InstanceStep {
            rewards: out.rewards,
            done: out.done,
            success: out.success,
            achieved,
            obs,
        })
    }

    /// Steps every instance with its rows of `actions` (`M·n` rows,
    /// instance-major). Continuous actions are clamped to `[−1, 1]`.
    pub fn step(&mut self, actions: &Actions) -> Result<BatchStep> {
        let m = self.len();
        let n = self.agents;
        if actions.len() != m * n {
            return shape_err(format!("{} actions for {m} instances × {n} agents", actions.len()));
        }
        let squashed = actions.squashed();
        let (agents, obs_dim, goal_dim) = (n, self.obs_dim, self.goal_dim);
        let action_for = |i: usize| -> AgentActions<'_> {
            match &squashed {
                Actions::Discrete(a) => AgentActions::Discrete(&a[i * n..(i + 1) * n]),
                Actions::Continuous { data, dim } => AgentActions::Continuous(&data[i * n * dim..(i + 1) * n * dim]),
            }
        };
        let results: Vec<Result<InstanceStep>> = if self.workers <= 1 || m == 1 {
            self.instances
                .iter_mut()
                .enumerate()
                .map(|(i, inst)| Self::step_instance(inst, action_for(i), agents, obs_dim, goal_dim))
                .collect()
        } else {
            let per = m.div_ceil(self.workers);
            let action_for = &action_for;
            thread::scope(|s| {
                let handles: Vec<_> = self
                    .instances
                    .chunks_mut(per)
                    .enumerate()
                    .map(|(c, chunk)| {
                        s.spawn(move || {
                            chunk
                                .iter_mut()
                                .enumerate()
                                .map(|(k, inst)| Self::step_instance(inst, action_for(c * per + k), agents, obs_dim, goal_dim))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("environment worker panicked"))
                    .collect()
            })
        };
        let mut out = BatchStep {
            rewards: Vec::with_capacity(m * n),
            dones: Vec::with_capacity(m),
            successes: Vec::with_capacity(m),
            next_achieved: Vec::with_capacity(m * n * goal_dim),
            terminal_obs: Vec::with_capacity(m * n * obs_dim),
        };
        for r in results {
            let r = r?;
            out.rewards.extend(r.rewards);
            out.dones.push(r.done);
            out.successes.push(r.success);
            out.next_achieved.extend(r.achieved);
            out.terminal_obs.extend(r.obs);
        }
        Ok(out)
    }
}
