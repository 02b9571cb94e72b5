//! The training loop: collect → relabel → score → epochs of (critic step,
//! policy step).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cppo_core::contrastive::{contrastive_advantages, her_relabel, normalize_advantages};
use cppo_core::diffcore::Tensor;
use cppo_core::envs::VecEnv;
use cppo_core::ppo::{gae, update_epoch, Adam, CriticUpdate, EpochStats, LearningRates, TrajectoryBatch};
use cppo_core::rng::{stream, Purpose, StreamRng};
use cppo_core::spaces::Actions;

use crate::agent::{Agent, Critic, EnvDims};
use crate::config::RunConfig;
use crate::error::Result;
use crate::evaluate::{evaluate, EvalResult};
use crate::metrics::{MetricsRow, MetricsWriter, RowKind};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: Agent,
    pub rows: Vec<MetricsRow>,
    pub final_eval: EvalResult,
    pub env_steps: u64,
}

/// Episode statistics from one rollout.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutStats {
    pub episodes: usize,
    pub successes: usize,
}

/// Steps `envs` for `steps` steps under the stochastic policy and packs the
/// transitions row-major (row = instance·agents + agent).
pub fn collect_rollout(
    agent: &Agent,
    envs: &mut VecEnv,
    steps: usize,
    rng: &mut StreamRng,
    cfg: &RunConfig,
) -> Result<(TrajectoryBatch, RolloutStats)> {
    let EnvDims {
        agents: n,
        obs_dim,
        goal_dim,
        space,
    } = agent.dims();
    let m = envs.len();
    let rows = m * n;
    let pdim = agent.policy_input_dim();
    let len = rows * steps;
    let aw = space.width();
    let mut obs = vec![0.0; len * obs_dim];
    let mut policy_obs = vec![0.0; len * pdim];
    let mut act_d = vec![0usize; if space.is_discrete() { len } else { 0 }];
    let mut act_c = vec![0.0; if space.is_discrete() { 0 } else { len * aw }];
    let mut old_log_probs = vec![0.0; len];
    let mut dones = vec![false; len];
    let mut next_achieved = vec![0.0; len * goal_dim];
    let mut trajectory_ids = vec![0u64; len];
    let mut goal_star = vec![0.0; len * goal_dim];
    let mut rewards = vec![0.0; len];
    let value_net = match &agent.critic {
        Critic::Value(v) => Some(v),
        Critic::Contrastive(_) => None,
    };
    let mut values = value_net.map(|_| vec![0.0; rows * (steps + 1)]);
    let mut stats = RolloutStats::default();

    let put = |dst: &mut [f64], src: &[f64], w: usize, t: usize| {
        for r in 0..rows {
            let i = r * steps + t;
            dst[i * w..(i + 1) * w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    };

    for t in 0..steps {
        let o = envs.observe();
        let g = envs.target_goals();
        let inputs = agent.policy_inputs(&o, &g);
        put(&mut obs, &o, obs_dim, t);
        put(&mut goal_star, &g, goal_dim, t);
        put(&mut policy_obs, &inputs, pdim, t);
        if let (Some(net), Some(vals)) = (value_net, values.as_mut()) {
            let v = net.eval(Tensor::new(&[rows, pdim], inputs.clone())?)?;
            for r in 0..rows {
                vals[r * (steps + 1) + t] = v.data()[r];
            }
        }
        let episodes = envs.episode_ids();
        let (mut tape, dist) = agent.act_dist(inputs)?;
        let actions = dist.sample(&tape, rng);
        let lp = dist.log_prob(&mut tape, &actions)?;
        let lp = tape.data(lp).to_vec();
        let out = envs.step(&actions)?;
        for r in 0..rows {
            let i = r * steps + t;
            let inst = r / n;
            old_log_probs[i] = lp[r];
            dones[i] = out.dones[inst];
            rewards[i] = out.rewards[r];
            let owner = if cfg.contrastive.agent_negatives { r } else { inst } as u64;
            trajectory_ids[i] = (owner << 32) | (episodes[inst] & 0xffff_ffff);
            match &actions {
                Actions::Discrete(a) => act_d[i] = a[r],
                Actions::Continuous { data, .. } => act_c[i * aw..(i + 1) * aw].copy_from_slice(&data[r * aw..(r + 1) * aw]),
            }
        }
        put(&mut next_achieved, &out.next_achieved, goal_dim, t);
        for (d, s) in out.dones.iter().zip(&out.successes) {
            if *d {
                stats.episodes += 1;
                stats.successes += usize::from(*s);
            }
        }
    }
    if let (Some(net), Some(vals)) = (value_net, values.as_mut()) {
        let inputs = agent.policy_inputs(&envs.observe(), &envs.target_goals());
        let v = net.eval(Tensor::new(&[rows, pdim], inputs)?)?;
        for r in 0..rows {
            vals[r * (steps + 1) + steps] = v.data()[r];
        }
    }
    if cfg.mode.is_contrastive() && cfg.debug.poison_rewards {
        rewards.fill(f64::NAN);
    }
    let actions = if space.is_discrete() {
        Actions::Discrete(act_d)
    } else {
        Actions::Continuous { data: act_c, dim: aw }
    };
    let batch = TrajectoryBatch {
        rows,
        steps,
        agent_count: n,
        obs_dim,
        policy_obs_dim: pdim,
        goal_dim,
        obs,
        policy_obs,
        actions,
        old_log_probs,
        dones,
        next_achieved_goal: next_achieved,
        trajectory_ids,
        goal_star,
        rewards: Some(rewards),
        values,
    };
    batch.validate()?;
    Ok((batch, stats))
}

fn mean_stats(epochs: &[EpochStats]) -> EpochStats {
    let k = epochs.len() as f64;
    let avg = |f: &dyn Fn(&EpochStats) -> f64| epochs.iter().map(f).sum::<f64>() / k;
    let avg_opt = |f: &dyn Fn(&EpochStats) -> Option<f64>| {
        let v: Vec<f64> = epochs.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    EpochStats {
        policy_loss: avg(&|e| e.policy_loss),
        infonce_loss: avg_opt(&|e| e.infonce_loss),
        value_loss: avg_opt(&|e| e.value_loss),
        clip_fraction: avg(&|e| e.clip_fraction),
        first_clip_fraction: epochs[0].first_clip_fraction,
        approx_kl: avg(&|e| e.approx_kl),
        entropy: avg(&|e| e.entropy),
        policy_grad_norm: avg(&|e| e.policy_grad_norm),
    }
}

fn eval_row(update: usize, env_steps: u64, e: &EvalResult) -> MetricsRow {
    let mut values = [None; 12];
    values[7] = Some(e.episodes as f64);
    values[9] = Some(e.win_rate);
    values[10] = Some(e.ci_low);
    values[11] = Some(e.ci_high);
    MetricsRow {
        kind: RowKind::Eval,
        update,
        env_steps,
        values,
    }
}

/// Trains per `cfg`. With `out_dir`, writes the metrics CSV as it goes,
/// then the final checkpoint, the resolved config and wall-clock timings.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut envs = VecEnv::new(&cfg.env, cfg.parallel_envs, seed, Purpose::Env)?.with_workers(cfg.workers);
    let mut init_rng = stream(seed, Purpose::Init, 0);
    let mut agent = Agent::new(cfg, EnvDims::of(&envs), &mut init_rng)?;
    let mut policy_rng = stream(seed, Purpose::Policy, 0);
    let mut relabel_rng = stream(seed, Purpose::Relabel, 0);
    let mut shuffle_rng = stream(seed, Purpose::Shuffle, 0);
    let mut value_rng = stream(seed, Purpose::ValueSamples, 0);
    let mut policy_opt = Adam::for_params(&agent.policy.params_mut());
    let mut critic_opt = match &mut agent.critic {
        Critic::Contrastive(e) => Adam::for_params(&e.params_mut()),
        Critic::Value(v) => Adam::for_params(&v.params_mut()),
    };

    let mut writer = None;
    let mut timing = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_json())?;
        writer = Some(MetricsWriter::create(&dir.join(METRICS_FILE))?);
        let mut t = fs::File::create(dir.join(TIMING_FILE))?;
        writeln!(t, "update,seconds")?;
        timing = Some(t);
    }
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut env_steps = 0u64;
    let mut final_eval = None;
    let total = cfg.total_updates;

    for u in 0..total {
        let lr = LearningRates {
            actor: cfg.ppo.lr_schedule.at(cfg.ppo.lr_actor, cfg.ppo.lr_end, u, total),
            critic: cfg.ppo.lr_schedule.at(cfg.ppo.lr_critic, cfg.ppo.lr_end, u, total),
        };
        let (batch, rollout) = collect_rollout(&agent, &mut envs, cfg.rollout_length, &mut policy_rng, cfg)?;
        env_steps += batch.len() as u64;

        let mut epochs = Vec::with_capacity(cfg.ppo.epochs);
        match &mut agent.critic {
            Critic::Contrastive(enc) => {
                let relabeled = her_relabel(&batch, &cfg.contrastive, &mut relabel_rng)?;
                let est = contrastive_advantages(enc, &agent.policy, &batch, &cfg.contrastive, &mut value_rng)?;
                for _ in 0..cfg.ppo.epochs {
                    let critic = CriticUpdate::Contrastive {
                        encoders: enc,
                        opt: &mut critic_opt,
                        relabeled: &relabeled,
                        batch_size: cfg.contrastive.batch_size,
                    };
                    epochs.push(update_epoch(
                        &mut agent.policy,
                        &mut policy_opt,
                        critic,
                        &batch,
                        &est.advantages,
                        &cfg.ppo,
                        lr,
                        &mut shuffle_rng,
                    )?);
                }
            }
            Critic::Value(net) => {
                let rewards = batch.rewards.as_deref().expect("rollouts carry rewards");
                let values = batch.values.as_deref().expect("value critic records values");
                let (adv, returns) = gae(
                    rewards,
                    values,
                    &batch.dones,
                    batch.rows,
                    batch.steps,
                    cfg.ppo.gamma,
                    cfg.ppo.gae_lambda,
                )?;
                let adv = normalize_advantages(&adv);
                for _ in 0..cfg.ppo.epochs {
                    let critic = CriticUpdate::Value {
                        net,
                        opt: &mut critic_opt,
                        returns: &returns,
                    };
                    epochs.push(update_epoch(
                        &mut agent.policy,
                        &mut policy_opt,
                        critic,
                        &batch,
                        &adv,
                        &cfg.ppo,
                        lr,
                        &mut shuffle_rng,
                    )?);
                }
            }
        }
        let s = mean_stats(&epochs);
        let train_success = (rollout.episodes > 0).then(|| rollout.successes as f64 / rollout.episodes as f64);
        let row = MetricsRow {
            kind: RowKind::Train,
            update: u + 1,
            env_steps,
            values: [
                Some(s.policy_loss),
                s.infonce_loss,
                s.value_loss,
                Some(s.clip_fraction),
                Some(s.first_clip_fraction),
                Some(s.approx_kl),
                Some(s.entropy),
                Some(rollout.episodes as f64),
                train_success,
                None,
                None,
                None,
            ],
        };
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        rows.push(row);

        if (u + 1) % cfg.eval_interval == 0 || u + 1 == total {
            let e = evaluate(&agent, &cfg.env, cfg.eval_episodes, seed)?;
            let row = eval_row(u + 1, env_steps, &e);
            if let Some(w) = writer.as_mut() {
                w.write(&row)?;
            }
            rows.push(row);
            final_eval = Some(e);
        }
        if let Some(t) = timing.as_mut() {
            writeln!(t, "{},{:.3}", u + 1, started.elapsed().as_secs_f64())?;
        }
    }
    if let Some(dir) = out_dir {
        agent.save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutput {
        agent,
        rows,
        final_eval: final_eval.expect("a final evaluation always runs"),
        env_steps,
    })
}
