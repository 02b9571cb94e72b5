//! Property checks shared by the core integration tests and the harness
//! acceptance run. Every expected value here is computed independently of
//! the library code under test.
#![allow(dead_code)]

use std::rc::Rc;

use rand::Rng;

use cppo_core::contrastive::{
    advantage, contrastive_advantages, goal_embeddings, infonce_loss, q_values_discrete, state_action_embeddings, value_discrete,
    ContrastiveConfig,
};
use cppo_core::diffcore::{finite_difference_check, Tape, Tensor, Var};
use cppo_core::nets::{Activation, EncoderParams, Mlp, MlpConfig, PolicyParams};
use cppo_core::oracle::{occupancy_q, Occupancy, TabularMdp};
use cppo_core::ppo::{
    clipped_policy_loss, gae, update_epoch, value_loss, Adam, CriticUpdate, LearningRates, PpoConfig, TrajectoryBatch,
};
use cppo_core::rng::{stream, Purpose, StreamRng};
use cppo_core::spaces::{ActionSpace, Actions};

/// Central-difference step for the gradient suite.
pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const MAX_GRAD_PARAMS: usize = 200;

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, Purpose::Experiment, 0)
}

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: &'static str,
    pub params: usize,
    pub max_rel_err: f64,
}

/// Differentiates `Σ w ⊙ build(inputs)` for fixed random weights `w`.
fn op_case<F>(name: &'static str, inputs: &[Tensor], build: F) -> GradCase
where
    F: Fn(&mut Tape, &[Var]) -> cppo_core::Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = build(&mut tape, &vars).expect("operation builds");
    let shape = tape.shape(out).to_vec();
    let numel = tape.value(out).numel();
    let mut wr = stream(17, Purpose::Experiment, numel as u64);
    let w = Tensor::new(&shape, (0..numel).map(|_| wr.gen_range(-1.0..1.0)).collect()).unwrap();
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], <[f64]>::to_vec))
        .collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let f = |p: &[f64]| {
        let mut tape = Tape::new();
        let mut off = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let k = t.numel();
                let v = tape.constant(Tensor::new(t.shape(), p[off..off + k].to_vec()).unwrap());
                off += k;
                v
            })
            .collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.data(out).iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    GradCase {
        name,
        params: flat.len(),
        max_rel_err: finite_difference_check(f, &flat, &analytic, FD_EPS),
    }
}

/// Differentiates a scalar loss of a network with respect to every
/// parameter of that network.
fn net_case<N, P, L>(name: &'static str, net: &N, params_mut: P, loss: L) -> GradCase
where
    N: Clone,
    P: Fn(&mut N) -> Vec<&mut Tensor>,
    L: Fn(&N, &mut Tape, bool) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (l, vars) = loss(net, &mut tape, true);
    tape.backward(l).unwrap();
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], <[f64]>::to_vec))
        .collect();
    let mut probe = net.clone();
    let flat: Vec<f64> = params_mut(&mut probe).iter().flat_map(|t| t.data().to_vec()).collect();
    assert_eq!(flat.len(), analytic.len(), "{name}: gradient layout");
    let f = |p: &[f64]| {
        let mut m = net.clone();
        let mut off = 0;
        for t in params_mut(&mut m) {
            let k = t.numel();
            t.data_mut().copy_from_slice(&p[off..off + k]);
            off += k;
        }
        let mut tape = Tape::new();
        let (l, _) = loss(&m, &mut tape, false);
        tape.value(l).item()
    };
    GradCase {
        name,
        params: flat.len(),
        max_rel_err: finite_difference_check(f, &flat, &analytic, FD_EPS),
    }
}

/// Moves every parameter off its initial value so that zero biases and
/// unit gains do not hide errors.
fn jitter(params: Vec<&mut Tensor>, rng: &mut StreamRng) {
    for t in params {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

/// Values in `[lo, hi]` at least `gap` away from each of `kinks`.
fn away_from(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Every tape operation and each full loss, on random small instances.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let r = &mut r;
    let mut cases = Vec::new();

    let (a, b) = (uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0));
    cases.push(op_case("matmul", &[a, b], |t, v| t.matmul(v[0], v[1])));
    let (x, bias) = (uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0));
    cases.push(op_case("add_bias", &[x, bias], |t, v| t.add_bias(v[0], v[1])));
    let pair = |r: &mut StreamRng| [uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)];
    cases.push(op_case("add", &pair(r), |t, v| t.add(v[0], v[1])));
    cases.push(op_case("sub", &pair(r), |t, v| t.sub(v[0], v[1])));
    cases.push(op_case("mul", &pair(r), |t, v| t.mul(v[0], v[1])));
    let a = uniform(r, &[3, 4], -1.0, 1.0);
    let offsets = away_from(r, &[3, 4], -1.0, 1.0, &[0.0], 0.1);
    let b = Tensor::new(&[3, 4], a.data().iter().zip(offsets.data()).map(|(x, o)| x + o).collect()).unwrap();
    cases.push(op_case("minimum", &[a, b], |t, v| t.minimum(v[0], v[1])));
    let one = |r: &mut StreamRng| [uniform(r, &[3, 4], -1.0, 1.0)];
    cases.push(op_case("scale", &one(r), |t, v| t.scale(v[0], -1.7)));
    cases.push(op_case("add_scalar", &one(r), |t, v| t.add_scalar(v[0], 0.3)));
    cases.push(op_case("neg", &one(r), |t, v| t.neg(v[0])));
    cases.push(op_case("exp", &one(r), |t, v| t.exp(v[0])));
    cases.push(op_case("swish", &[uniform(r, &[3, 4], -3.0, 3.0)], |t, v| t.swish(v[0])));
    let x = away_from(r, &[3, 4], -1.0, 1.0, &[-0.5, 0.5], 0.05);
    cases.push(op_case("clamp", &[x], |t, v| t.clamp(v[0], -0.5, 0.5)));
    let ln = [
        uniform(r, &[3, 5], -1.0, 1.0),
        uniform(r, &[5], 0.5, 1.5),
        uniform(r, &[5], -0.5, 0.5),
    ];
    cases.push(op_case("layer_norm", &ln, |t, v| t.layer_norm(v[0], v[1], v[2])));
    cases.push(op_case("log_softmax", &[uniform(r, &[3, 4], -2.0, 2.0)], |t, v| {
        t.log_softmax(v[0])
    }));
    let mask: Rc<[bool]> = Rc::from(vec![
        true, false, true, true, false, true, false, false, true, true, true, true,
    ]);
    cases.push(op_case(
        "masked_log_softmax",
        &[uniform(r, &[3, 4], -2.0, 2.0)],
        move |t, v| t.masked_log_softmax(v[0], mask.clone()),
    ));
    cases.push(op_case("sum", &one(r), |t, v| t.sum(v[0])));
    cases.push(op_case("mean", &one(r), |t, v| t.mean(v[0])));
    cases.push(op_case("row_sum", &one(r), |t, v| t.row_sum(v[0])));
    let cols: Rc<[usize]> = Rc::from(vec![2, 0, 1, 2]);
    cases.push(op_case("gather_cols", &[uniform(r, &[4, 3], -1.0, 1.0)], move |t, v| {
        t.gather_cols(v[0], cols.clone())
    }));
    let blocks: Rc<[usize]> = Rc::from(vec![3, 0, 1]);
    cases.push(op_case("select_blocks", &[uniform(r, &[3, 4, 2], -1.0, 1.0)], move |t, v| {
        t.select_blocks(v[0], blocks.clone())
    }));
    let pd = [uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)];
    cases.push(op_case("pairwise_dist", &pd, |t, v| t.pairwise_dist(v[0], v[1])));
    let rd = [uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 2], -1.0, 1.0)];
    cases.push(op_case("row_dist", &rd, |t, v| t.row_dist(v[0], v[1])));
    let bd = [uniform(r, &[3, 4, 2], -1.0, 1.0), uniform(r, &[3, 2], -1.0, 1.0)];
    cases.push(op_case("block_dist", &bd, |t, v| t.block_dist(v[0], v[1])));
    let cc = [uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 3], -1.0, 1.0)];
    cases.push(op_case("concat_cols", &cc, |t, v| t.concat_cols(v[0], v[1])));
    cases.push(op_case("broadcast_rows", &[uniform(r, &[3], -1.0, 1.0)], |t, v| {
        t.broadcast_rows(v[0], 4)
    }));
    cases.push(op_case("reshape", &one(r), |t, v| t.reshape(v[0], &[2, 6])));

    // InfoNCE on free embeddings, with repeated trajectories masked.
    let ids = [0u64, 0, 1, 2, 2, 3];
    let emb = [uniform(r, &[6, 3], -1.0, 1.0), uniform(r, &[6, 3], -1.0, 1.0)];
    cases.push(op_case("infonce_loss", &emb, move |t, v| infonce_loss(t, v[0], v[1], &ids)));

    // InfoNCE through both encoders, discrete and continuous.
    for (name, space) in [
        ("infonce_encoders_discrete", ActionSpace::Discrete(2)),
        ("infonce_encoders_continuous", ActionSpace::Continuous(2)),
    ] {
        let mut enc = EncoderParams::new(3, 2, &[4], true, 3, space, r).unwrap();
        jitter(enc.params_mut(), r);
        let obs = uniform(r, &[6, 3], -1.0, 1.0);
        let goals = uniform(r, &[6, 2], -1.0, 1.0);
        let actions = match space {
            ActionSpace::Discrete(n) => Actions::Discrete((0..6).map(|_| r.gen_range(0..n)).collect()),
            ActionSpace::Continuous(k) => Actions::Continuous {
                data: away_from(r, &[6, k], -0.9, 0.9, &[], 0.0).into_data(),
                dim: k,
            },
        };
        cases.push(net_case(name, &enc, EncoderParams::params_mut, move |enc, tape, track| {
            let vars = enc.bind(tape, track);
            let phi = state_action_embeddings(enc, tape, &vars, obs.clone(), &actions).unwrap();
            let g = tape.constant(goals.clone());
            let psi = enc.encode_goal(tape, &vars, g).unwrap();
            (infonce_loss(tape, phi, psi, &ids).unwrap(), vars.all())
        }));
    }

    // Clipped surrogate with entropy bonus through a categorical and a
    // Gaussian policy. Old log-probabilities sit at fixed log-ratio offsets
    // on both sides of the clip boundaries.
    for (name, space) in [
        ("clipped_policy_loss_categorical", ActionSpace::Discrete(3)),
        ("clipped_policy_loss_gaussian", ActionSpace::Continuous(2)),
    ] {
        let mut policy = PolicyParams::new(3, &[4], true, space, r).unwrap();
        jitter(policy.params_mut(), r);
        let obs = uniform(r, &[8, 3], -1.0, 1.0);
        let mut tape = Tape::new();
        let vars = policy.bind(&mut tape, false);
        let x = tape.constant(obs.clone());
        let dist = policy.forward(&mut tape, &vars, x).unwrap();
        let actions = dist.sample(&tape, r);
        let lp = dist.log_prob(&mut tape, &actions).unwrap();
        let shifts = [0.4, -0.4, 0.05, -0.05, 0.35, -0.35, 0.1, -0.1];
        let old: Vec<f64> = tape.data(lp).iter().zip(shifts).map(|(l, s)| l - s).collect();
        let adv: Vec<f64> = (0..8)
            .map(|i| if i % 3 == 0 { -1.0 } else { 1.0 } * r.gen_range(0.2..1.5))
            .collect();
        cases.push(net_case(name, &policy, PolicyParams::params_mut, move |p, tape, track| {
            let vars = p.bind(tape, track);
            let x = tape.constant(obs.clone());
            let dist = p.forward(tape, &vars, x).unwrap();
            let new_lp = dist.log_prob(tape, &actions).unwrap();
            let ent = dist.entropy(tape).unwrap();
            let (loss, _) = clipped_policy_loss(tape, new_lp, &old, &adv, 0.2, ent, 0.01).unwrap();
            (loss, vars.all())
        }));
    }

    // Value regression through a value MLP.
    let config = MlpConfig {
        input_dim: 3,
        hidden: vec![4],
        output_dim: 1,
        activation: Activation::Swish,
        layer_norm: true,
    };
    let mut net = Mlp::new(config, 1.0, r).unwrap();
    jitter(net.params_mut(), r);
    let obs = uniform(r, &[8, 3], -1.0, 1.0);
    let targets = uniform(r, &[8], -2.0, 2.0).into_data();
    cases.push(net_case("value_loss", &net, Mlp::params_mut, move |m, tape, track| {
        let vars = m.bind(tape, track);
        let x = tape.constant(obs.clone());
        let out = m.forward(tape, &vars, x).unwrap();
        let pred = tape.reshape(out, &[8]).unwrap();
        (value_loss(tape, pred, &targets).unwrap(), vars.all())
    }));
    cases
}

/// Per-row count of softmax entries: the positive plus every pair from
/// another trajectory.
pub fn denominator_counts(ids: &[u64]) -> Vec<usize> {
    ids.iter().map(|i| 1 + ids.iter().filter(|j| *j != i).count()).collect()
}

fn eval_infonce(phi: &Tensor, psi: &Tensor, ids: &[u64]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(phi.clone());
    let g = tape.constant(psi.clone());
    let l = infonce_loss(&mut tape, p, g, ids).unwrap();
    tape.value(l).item()
}

/// Loss of a single (φ, ψ) pair.
pub fn infonce_single_pair(seed: u64) -> f64 {
    let mut r = rng(seed);
    let phi = uniform(&mut r, &[1, 4], -3.0, 3.0);
    let psi = uniform(&mut r, &[1, 4], -3.0, 3.0);
    eval_infonce(&phi, &psi, &[7])
}

/// `|loss − mean_i ln(count_i)|` when both encoders ignore their inputs.
/// The constant outputs come from zeroed output weights.
pub fn infonce_constant_encoder_gap(seed: u64, ids: &[u64]) -> f64 {
    let mut r = rng(seed);
    let (n, d, actions) = (ids.len(), 3, 2);
    let mut enc = EncoderParams::new(4, 2, &[8], true, d, ActionSpace::Discrete(actions), &mut r).unwrap();
    let centre: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    for (mlp, bias) in [(&mut enc.sa, centre.repeat(actions)), (&mut enc.goal, vec![0.5; d])] {
        let last = mlp.layers_mut().last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().copy_from_slice(&bias);
    }
    let obs = uniform(&mut r, &[n, 4], -1.0, 1.0);
    let acts = Actions::Discrete((0..n).map(|_| r.gen_range(0..actions)).collect());
    let goals = uniform(&mut r, &[n, 2], -1.0, 1.0);
    let mut tape = Tape::new();
    let vars = enc.bind(&mut tape, false);
    let phi = state_action_embeddings(&enc, &mut tape, &vars, obs, &acts).unwrap();
    let g = tape.constant(goals);
    let psi = enc.encode_goal(&mut tape, &vars, g).unwrap();
    let loss = infonce_loss(&mut tape, phi, psi, ids).unwrap();
    let expected = denominator_counts(ids).iter().map(|&c| (c as f64).ln()).sum::<f64>() / n as f64;
    (tape.value(loss).item() - expected).abs()
}

/// Losses as every positive pair is pulled together by the factor `s`.
///
/// Goal embeddings live in the first `k` coordinates; `φ_i` sits at
/// `ψ_i + s·r_i·e_(k+i)`, so shrinking `s` moves each positive closer while
/// every negative distance `√(‖ψ_i − ψ_j‖² + (s·r_i)²)` shrinks more
/// slowly.
pub fn infonce_shrinkage_curve(seed: u64, ids: &[u64], scales: &[f64]) -> Vec<f64> {
    let mut r = rng(seed);
    let (n, k) = (ids.len(), 3);
    let d = k + n;
    let mut psi = vec![0.0; n * d];
    for i in 0..n {
        for c in 0..k {
            psi[i * d + c] = r.gen_range(-1.0..1.0);
        }
    }
    let radii: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
    let psi_t = Tensor::new(&[n, d], psi.clone()).unwrap();
    scales
        .iter()
        .map(|&s| {
            let mut phi = psi.clone();
            for i in 0..n {
                phi[i * d + k + i] += s * radii[i];
            }
            eval_infonce(&Tensor::new(&[n, d], phi).unwrap(), &psi_t, ids)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct AdvantageCheck {
    /// Largest `|Σ_a π(a|s) A(s, a)|` over states.
    pub max_expectation: f64,
    /// States whose advantage argmax differs from the Q argmax.
    pub argmax_mismatches: usize,
    /// Largest gap between the batch estimator and the direct `Σ π Q`.
    pub max_value_gap: f64,
    pub states: usize,
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
}

/// Advantage identities on a random discrete critic and policy.
pub fn advantage_identity(seed: u64) -> AdvantageCheck {
    let mut r = rng(seed);
    let (obs_dim, goal_dim, na) = (5, 2, 4);
    let space = ActionSpace::Discrete(na);
    let mut critic = EncoderParams::new(obs_dim, goal_dim, &[16], true, 8, space, &mut r).unwrap();
    jitter(critic.params_mut(), &mut r);
    let mut policy = PolicyParams::new(obs_dim + goal_dim, &[16], true, space, &mut r).unwrap();
    // A larger head spreads the action probabilities.
    for v in policy.net.layers_mut().last_mut().unwrap().weight.data_mut() {
        *v *= 200.0;
    }
    let (rows, steps) = (4, 8);
    let n = rows * steps;
    let obs = uniform(&mut r, &[n, obs_dim], -1.0, 1.0);
    let g_star: Vec<f64> = (0..goal_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let policy_obs: Vec<f64> = obs
        .data()
        .chunks(obs_dim)
        .flat_map(|o| o.iter().chain(&g_star).copied())
        .collect();
    let pobs = Tensor::new(&[n, obs_dim + goal_dim], policy_obs.clone()).unwrap();

    let psi = goal_embeddings(&critic, Tensor::new(&[1, goal_dim], g_star.clone()).unwrap()).unwrap();
    let psi = psi.reshape(&[8]).unwrap();
    let q = q_values_discrete(&critic, obs.clone(), &psi).unwrap();
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape, false);
    let x = tape.constant(pobs);
    let dist = policy.forward(&mut tape, &vars, x).unwrap();
    let probs = dist.probs(&tape).unwrap();
    let v = value_discrete(&q, &Tensor::new(&[n, na], probs.clone()).unwrap()).unwrap();

    let mut max_expectation = 0.0f64;
    let mut argmax_mismatches = 0;
    for s in 0..n {
        let qs = q.row(s);
        let a_all = advantage(qs, &vec![v[s]; na], false).unwrap();
        let e: f64 = a_all.iter().zip(&probs[s * na..(s + 1) * na]).map(|(a, p)| a * p).sum();
        max_expectation = max_expectation.max(e.abs());
        argmax_mismatches += usize::from(argmax(&a_all) != argmax(qs));
    }

    let actions: Vec<usize> = (0..n).map(|_| r.gen_range(0..na)).collect();
    let batch = TrajectoryBatch {
        rows,
        steps,
        agent_count: 1,
        obs_dim,
        policy_obs_dim: obs_dim + goal_dim,
        goal_dim,
        obs: obs.data().to_vec(),
        policy_obs,
        actions: Actions::Discrete(actions.clone()),
        old_log_probs: vec![-1.0; n],
        dones: vec![false; n],
        next_achieved_goal: vec![0.0; n * goal_dim],
        trajectory_ids: (0..n as u64).map(|i| i / steps as u64).collect(),
        goal_star: g_star.repeat(n),
        rewards: None,
        values: None,
    };
    let cfg = ContrastiveConfig {
        normalize_advantages: false,
        ..ContrastiveConfig::default()
    };
    let est = contrastive_advantages(&critic, &policy, &batch, &cfg, &mut r).unwrap();
    let mut max_value_gap = 0.0f64;
    for s in 0..n {
        let direct: f64 = q.row(s).iter().zip(&probs[s * na..(s + 1) * na]).map(|(q, p)| q * p).sum();
        max_value_gap = max_value_gap
            .max((est.values[s] - direct).abs())
            .max((est.q_chosen[s] - q.row(s)[actions[s]]).abs())
            .max((est.raw[s] - (est.q_chosen[s] - est.values[s])).abs());
    }
    AdvantageCheck {
        max_expectation,
        argmax_mismatches,
        max_value_gap,
        states: n,
    }
}

/// `Â_t = Σ_l (γλ)^l δ_(t+l)`, summed directly until the sequence ends or
/// an episode boundary has been included.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let delta: Vec<f64> = (0..t_len)
        .map(|t| {
            let next = if dones[t] { 0.0 } else { values[t + 1] };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..t_len)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..t_len - t {
                total += (gamma * lambda).powi(l as i32) * delta[t + l];
                if dones[t + l] {
                    break;
                }
            }
            total
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GaeCheck {
    pub max_gap: f64,
    /// λ = 0 reproduced the one-step residual bit for bit everywhere.
    pub lambda0_exact: bool,
    pub sequences: usize,
}

pub const GAE_LAMBDAS: [f64; 4] = [0.0, 0.5, 0.95, 1.0];

pub fn gae_oracle(seed: u64, sequences: usize) -> GaeCheck {
    let mut r = rng(seed);
    let mut max_gap = 0.0f64;
    let mut lambda0_exact = true;
    for _ in 0..sequences {
        let t_len = r.gen_range(1..=10);
        let gamma = r.gen_range(0.5..1.0);
        let rewards: Vec<f64> = (0..t_len).map(|_| r.gen_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..=t_len).map(|_| r.gen_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..t_len).map(|_| r.gen_bool(0.2)).collect();
        for lambda in GAE_LAMBDAS {
            let (adv, ret) = gae(&rewards, &values, &dones, 1, t_len, gamma, lambda).unwrap();
            let direct = gae_double_sum(&rewards, &values, &dones, gamma, lambda);
            for t in 0..t_len {
                max_gap = max_gap
                    .max((adv[t] - direct[t]).abs())
                    .max((ret[t] - (adv[t] + values[t])).abs());
            }
            if lambda == 0.0 {
                for t in 0..t_len {
                    let next = if dones[t] { 0.0 } else { values[t + 1] };
                    lambda0_exact &= adv[t] == rewards[t] + gamma * next - values[t];
                }
            }
        }
    }
    GaeCheck {
        max_gap,
        lambda0_exact,
        sequences,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClipCheck {
    /// Largest gradient magnitude on a sample in the clipped regime.
    pub max_clipped_grad: f64,
    /// Smallest gradient magnitude on an unclipped sample.
    pub min_unclipped_grad: f64,
    pub clipped_samples: usize,
    /// First-minibatch clip fraction of a fresh single-epoch update.
    pub first_clip_fraction: f64,
}

/// Per-sample gradients of the clipped surrogate, and the clip fraction of
/// the first minibatch after a rollout.
pub fn clip_contract(seed: u64) -> ClipCheck {
    let mut r = rng(seed);
    let eps = 0.2;
    let n = 64;
    let new_lp: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..-0.1)).collect();
    let log_ratio: Vec<f64> = (0..n).map(|_| r.gen_range(-0.6..0.6)).collect();
    let old: Vec<f64> = new_lp.iter().zip(&log_ratio).map(|(l, d)| l - d).collect();
    let adv: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let lp = tape.param(&Tensor::new(&[n], new_lp).unwrap());
    let ent = tape.constant(Tensor::zeros(&[n]));
    let (loss, _) = clipped_policy_loss(&mut tape, lp, &old, &adv, eps, ent, 0.0).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(lp).unwrap().to_vec();
    let mut max_clipped_grad = 0.0f64;
    let mut min_unclipped_grad = f64::INFINITY;
    let mut clipped_samples = 0;
    for i in 0..n {
        let ratio = log_ratio[i].exp();
        let clipped = (ratio > 1.0 + eps && adv[i] > 0.0) || (ratio < 1.0 - eps && adv[i] < 0.0);
        if clipped {
            clipped_samples += 1;
            max_clipped_grad = max_clipped_grad.max(grad[i].abs());
        } else {
            min_unclipped_grad = min_unclipped_grad.min(grad[i].abs());
        }
    }

    // Fresh rollout from the current policy, then one epoch.
    let (obs_dim, na, rows, steps) = (6, 3, 8, 32);
    let total = rows * steps;
    let space = ActionSpace::Discrete(na);
    let mut policy = PolicyParams::new(obs_dim, &[16, 16], true, space, &mut r).unwrap();
    jitter(policy.params_mut(), &mut r);
    let obs = uniform(&mut r, &[total, obs_dim], -1.0, 1.0);
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape, false);
    let x = tape.constant(obs.clone());
    let dist = policy.forward(&mut tape, &vars, x).unwrap();
    let actions = dist.sample(&tape, &mut r);
    let lp = dist.log_prob(&mut tape, &actions).unwrap();
    let old_log_probs = tape.data(lp).to_vec();
    let batch = TrajectoryBatch {
        rows,
        steps,
        agent_count: 1,
        obs_dim,
        policy_obs_dim: obs_dim,
        goal_dim: 1,
        obs: obs.data().to_vec(),
        policy_obs: obs.data().to_vec(),
        actions,
        old_log_probs,
        dones: vec![false; total],
        next_achieved_goal: vec![0.0; total],
        trajectory_ids: vec![0; total],
        goal_star: vec![0.0; total],
        rewards: Some(vec![0.0; total]),
        values: None,
    };
    let config = MlpConfig {
        input_dim: obs_dim,
        hidden: vec![16],
        output_dim: 1,
        activation: Activation::Swish,
        layer_norm: true,
    };
    let mut value_net = Mlp::new(config, 1.0, &mut r).unwrap();
    let mut value_opt = Adam::new(&value_net.params_mut().iter().map(|t| t.numel()).collect::<Vec<_>>());
    let mut policy_opt = Adam::new(&policy.params_mut().iter().map(|t| t.numel()).collect::<Vec<_>>());
    let returns = uniform(&mut r, &[total], -1.0, 1.0).into_data();
    let advantages = uniform(&mut r, &[total], -1.0, 1.0).into_data();
    let cfg = PpoConfig {
        epochs: 1,
        minibatch_size: 64,
        lr_actor: 1e-2,
        ..PpoConfig::default()
    };
    let stats = update_epoch(
        &mut policy,
        &mut policy_opt,
        CriticUpdate::Value {
            net: &mut value_net,
            opt: &mut value_opt,
            returns: &returns,
        },
        &batch,
        &advantages,
        &cfg,
        LearningRates {
            actor: cfg.lr_actor,
            critic: cfg.lr_critic,
        },
        &mut r,
    )
    .unwrap();
    ClipCheck {
        max_clipped_grad,
        min_unclipped_grad,
        clipped_samples,
        first_clip_fraction: stats.first_clip_fraction,
    }
}

/// Three-state chain `0 – 1 – 2` with an absorbing goal at 2. "Right"
/// advances with probability 0.8, "left" retreats with probability 0.8,
/// otherwise the agent stays.
pub fn chain_mdp(gamma: f64) -> TabularMdp {
    let (s, a) = (3, 2);
    let mut p = vec![0.0; s * a * s];
    let mut set = |from: usize, act: usize, to: usize, prob: f64| p[(from * a + act) * s + to] += prob;
    for from in 0..2 {
        set(from, 0, from.saturating_sub(1), 0.8);
        set(from, 0, from, 0.2);
        set(from, 1, from + 1, 0.8);
        set(from, 1, from, 0.2);
    }
    set(2, 0, 2, 1.0);
    set(2, 1, 2, 1.0);
    TabularMdp::from_dense(s, a, &p, vec![false, false, true], gamma).unwrap()
}

/// Prefers "right" without being deterministic.
pub const CHAIN_POLICY: [f64; 6] = [0.35, 0.65, 0.35, 0.65, 0.5, 0.5];

/// Monte-Carlo occupancy: draw a horizon `T` with `P(T = t) = (1−γ)γ^t`
/// and record whether the state at time `T` is a goal. The mean of that
/// indicator equals `Q(s, a)`.
pub fn chain_monte_carlo(
    mdp: &TabularMdp,
    policy: &[f64],
    s0: usize,
    a0: usize,
    episodes: usize,
    rng: &mut StreamRng,
) -> (f64, f64) {
    let na = mdp.actions();
    let sample = |dist: &[(usize, f64)], rng: &mut StreamRng| {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(n, p) in dist {
            acc += p;
            if u < acc {
                return n;
            }
        }
        dist.last().unwrap().0
    };
    let mut hits = 0usize;
    for _ in 0..episodes {
        let mut horizon = 0;
        while rng.gen::<f64>() < mdp.gamma() {
            horizon += 1;
        }
        let (mut s, mut a) = (s0, a0);
        for _ in 0..horizon {
            s = sample(mdp.transitions(s, a), rng);
            let u: f64 = rng.gen();
            let row = &policy[s * na..(s + 1) * na];
            let mut acc = 0.0;
            a = na - 1;
            for (j, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    a = j;
                    break;
                }
            }
        }
        hits += usize::from(mdp.is_goal(s));
    }
    let p = hits as f64 / episodes as f64;
    (p, (p * (1.0 - p) / episodes as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub occupancy: Occupancy,
    pub in_unit_interval: bool,
    pub absorbing_goal_exact: bool,
    /// Largest `|Q_dp − Q_mc| / SE` over pairs with a nonzero standard error.
    pub max_z: f64,
    /// Pairs whose estimate has zero variance and differs from the oracle.
    pub degenerate_mismatches: usize,
}

pub fn occupancy_oracle(seed: u64, gamma: f64, episodes: usize) -> OracleCheck {
    let mdp = chain_mdp(gamma);
    let occupancy = occupancy_q(&mdp, &CHAIN_POLICY).unwrap();
    let q = &occupancy.q;
    let in_unit_interval = q.iter().all(|v| (0.0..=1.0).contains(v));
    let absorbing_goal_exact = q[4] == 1.0 && q[5] == 1.0;
    let mut r = rng(seed);
    let mut max_z = 0.0f64;
    let mut degenerate_mismatches = 0;
    for s in 0..3 {
        for a in 0..2 {
            let (mc, se) = chain_monte_carlo(&mdp, &CHAIN_POLICY, s, a, episodes, &mut r);
            let gap = (q[s * 2 + a] - mc).abs();
            if se > 0.0 {
                max_z = max_z.max(gap / se);
            } else if gap != 0.0 {
                degenerate_mismatches += 1;
            }
        }
    }
    OracleCheck {
        occupancy,
        in_unit_interval,
        absorbing_goal_exact,
        max_z,
        degenerate_mismatches,
    }
}
