//! Critic fidelity on the small gridworld: train the contrastive encoders
//! on uniform-random rollouts and rank-compare the learned Q with the exact
//! discounted occupancy of the goal under the same uniform policy.

use rand::seq::SliceRandom;
use rand::Rng;

use cppo_core::contrastive::{goal_embeddings, her_relabel, infonce_minibatch_loss, q_values_discrete, ContrastiveConfig};
use cppo_core::diffcore::{Tape, Tensor};
use cppo_core::envs::{EnvConfig, EnvName, VecEnv};
use cppo_core::nets::EncoderParams;
use cppo_core::oracle::{grid_observation, gridworld_to_tabular, occupancy_q, rank_agreement, uniform_policy, RankAgreement};
use cppo_core::ppo::{clip_grad_norm, Adam, TrajectoryBatch};
use cppo_core::rng::{stream, Purpose};
use cppo_core::spaces::{ActionSpace, Actions};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityConfig {
    pub size: usize,
    pub gamma: f64,
    pub envs: usize,
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub repr_dim: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            size: 5,
            gamma: 0.9,
            envs: 32,
            steps: 400,
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            hidden: vec![64, 64],
            repr_dim: 32,
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub agreement: RankAgreement,
    pub learned_q: Vec<f64>,
    pub oracle_q: Vec<f64>,
    pub final_infonce: f64,
}

/// Uniform-random rollout packed like a training batch.
fn random_rollout(env_cfg: &EnvConfig, cfg: &FidelityConfig) -> Result<TrajectoryBatch> {
    let mut envs = VecEnv::new(env_cfg, cfg.envs, cfg.seed, Purpose::Env)?;
    let mut rng = stream(cfg.seed, Purpose::Policy, 0);
    let (m, steps) = (cfg.envs, cfg.steps);
    let (od, gd) = (envs.obs_dim(), envs.goal_dim());
    let ActionSpace::Discrete(n_actions) = envs.action_space() else {
        return Err(HarnessError::config("critic fidelity needs a discrete action space"));
    };
    let len = m * steps;
    let mut obs = vec![0.0; len * od];
    let mut actions = vec![0; len];
    let mut dones = vec![false; len];
    let mut next_achieved = vec![0.0; len * gd];
    let mut ids = vec![0u64; len];
    let mut goal_star = vec![0.0; len * gd];
    for t in 0..steps {
        let o = envs.observe();
        let g = envs.target_goals();
        let episodes = envs.episode_ids();
        let a: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n_actions)).collect();
        let out = envs.step(&Actions::Discrete(a.clone()))?;
        for r in 0..m {
            let i = r * steps + t;
            obs[i * od..(i + 1) * od].copy_from_slice(&o[r * od..(r + 1) * od]);
            goal_star[i * gd..(i + 1) * gd].copy_from_slice(&g[r * gd..(r + 1) * gd]);
            next_achieved[i * gd..(i + 1) * gd].copy_from_slice(&out.next_achieved[r * gd..(r + 1) * gd]);
            actions[i] = a[r];
            dones[i] = out.dones[r];
            ids[i] = ((r as u64) << 32) | episodes[r];
        }
    }
    let batch = TrajectoryBatch {
        rows: m,
        steps,
        agent_count: 1,
        obs_dim: od,
        policy_obs_dim: 0,
        goal_dim: gd,
        obs,
        policy_obs: Vec::new(),
        actions: Actions::Discrete(actions),
        old_log_probs: vec![-(n_actions as f64).ln(); len],
        dones,
        next_achieved_goal: next_achieved,
        trajectory_ids: ids,
        goal_star,
        rewards: None,
        values: None,
    };
    batch.validate()?;
    Ok(batch)
}

/// Learned `Q(s, a) = −‖φ(o_s, a) − ψ(g*)‖` for every tabular state, in
/// `s·|A| + a` order.
pub fn learned_grid_q(critic: &EncoderParams, size: usize, goal: &[f64]) -> Result<Vec<f64>> {
    let states = size * size * 4;
    let obs: Vec<f64> = (0..states).flat_map(|s| grid_observation(size, s)).collect();
    let obs = Tensor::new(&[states, critic.obs_dim()], obs)?;
    let psi = goal_embeddings(critic, Tensor::new(&[1, goal.len()], goal.to_vec())?)?.reshape(&[critic.repr_dim()])?;
    Ok(q_values_discrete(critic, obs, &psi)?.into_data())
}

pub fn run_fidelity(cfg: &FidelityConfig) -> Result<FidelityReport> {
    let env_cfg = EnvConfig {
        name: EnvName::Grid,
        size: cfg.size,
        ..EnvConfig::default()
    };
    let batch = random_rollout(&env_cfg, cfg)?;
    let mut init = stream(cfg.seed, Purpose::Init, 0);
    let space = env_cfg.build()?.action_space();
    let mut critic = EncoderParams::new(
        batch.obs_dim,
        batch.goal_dim,
        &cfg.hidden,
        true,
        cfg.repr_dim,
        space,
        &mut init,
    )?;
    let mut opt = Adam::for_params(&critic.params_mut());
    let ccfg = ContrastiveConfig {
        her_gamma: cfg.gamma,
        ..ContrastiveConfig::default()
    };
    let mut relabel_rng = stream(cfg.seed, Purpose::Relabel, 0);
    let mut shuffle_rng = stream(cfg.seed, Purpose::Shuffle, 0);
    let mut final_infonce = f64::NAN;
    for _ in 0..cfg.epochs {
        let relabeled = her_relabel(&batch, &ccfg, &mut relabel_rng)?;
        let mut order: Vec<usize> = (0..relabeled.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = critic.bind(&mut tape, true);
            let loss = infonce_minibatch_loss(&critic, &mut tape, &vars, &batch, &relabeled, idx)?;
            tape.backward(loss)?;
            total += tape.value(loss).item();
            count += 1;
            let mut grads: Vec<Vec<f64>> = vars
                .all()
                .iter()
                .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], <[f64]>::to_vec))
                .collect();
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(critic.params_mut(), &grads, cfg.lr)?;
        }
        final_infonce = total / count as f64;
    }
    let goal = &batch.goal_star[..batch.goal_dim];
    let learned_q = learned_grid_q(&critic, cfg.size, goal)?;
    let mdp = gridworld_to_tabular(cfg.size, cfg.gamma)?;
    let oracle = occupancy_q(&mdp, &uniform_policy(mdp.states(), mdp.actions()))?;
    let agreement = rank_agreement(&learned_q, &oracle.q)?;
    Ok(FidelityReport {
        agreement,
        learned_q,
        oracle_q: oracle.q,
        final_infonce,
    })
}
