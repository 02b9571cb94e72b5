//! Exact goal-conditioned Q-values for small tabular tasks.
//!
//! `Q(s, a) = (1−γ) Σ_{t≥0} γ^t P(s_t ∈ G | s_0 = s, a_0 = a)`, the
//! discounted occupancy of the goal set `G`. The sum starts at `t = 0`, so
//! the current state counts: a goal state scores `(1−γ)` for itself before
//! anything else happens, and an absorbing goal scores exactly 1.

use std::io::Write;

use crate::envs::{Env, GridEnv, GridReward, GRID_ACTIONS};
use crate::error::{shape_err, Error, Result};

/// Tolerance on transition and policy row sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Sup-norm fixed-point residual at which iteration stops.
pub const RESIDUAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000_000;

/// Finite MDP with a goal set. Transitions are stored sparsely per
/// `(s, a)`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    /// `(next_state, probability)` lists indexed by `s·A + a`.
    next: Vec<Vec<(usize, f64)>>,
    goal: Vec<bool>,
    /// Goal states from which every action stays inside this set; their
    /// occupancy is exactly 1.
    closed: Vec<bool>,
    gamma: f64,
}

impl TabularMdp {
    /// From a dense `[S×A×S]` transition array.
    pub fn from_dense(states: usize, actions: usize, p: &[f64], goal: Vec<bool>, gamma: f64) -> Result<Self> {
        if p.len() != states * actions * states {
            return shape_err(format!(
                "transition array has {} entries for S={states}, A={actions}",
                p.len()
            ));
        }
        let next = p
            .chunks(states)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &q)| q != 0.0)
                    .map(|(s, &q)| (s, q))
                    .collect()
            })
            .collect();
        Self::from_sparse(states, actions, next, goal, gamma)
    }

    pub fn from_sparse(states: usize, actions: usize, next: Vec<Vec<(usize, f64)>>, goal: Vec<bool>, gamma: f64) -> Result<Self> {
        if next.len() != states * actions || goal.len() != states {
            return shape_err(format!(
                "{} transition rows and {} goal flags for S={states}, A={actions}",
                next.len(),
                goal.len()
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Contract(format!("discount must lie in (0, 1), got {gamma}")));
        }
        for (i, row) in next.iter().enumerate() {
            let total: f64 = row.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|&(s, p)| s >= states || p < 0.0) {
                return Err(Error::Contract(format!(
                    "transition row (s={}, a={}) is not a distribution (sum {total})",
                    i / actions,
                    i % actions
                )));
            }
        }
        let mut closed = goal.clone();
        let mut changed = true;
        while changed {
            changed = false;
            for s in 0..states {
                if closed[s]
                    && next[s * actions..(s + 1) * actions]
                        .iter()
                        .flatten()
                        .any(|&(n, p)| p > 0.0 && !closed[n])
                {
                    closed[s] = false;
                    changed = true;
                }
            }
        }
        Ok(Self {
            states,
            actions,
            next,
            goal,
            closed,
            gamma,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goal[s]
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.next[s * self.actions + a]
    }

    /// Single successor of a deterministic `(s, a)`.
    pub fn deterministic_next(&self, s: usize, a: usize) -> Option<usize> {
        match self.transitions(s, a) {
            [(n, p)] if *p == 1.0 => Some(*n),
            _ => None,
        }
    }

    fn backup(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let g = self.gamma;
        for s in 0..self.states {
            if self.closed[s] {
                out[s * self.actions..(s + 1) * self.actions].fill(1.0);
                continue;
            }
            let base = if self.goal[s] { 1.0 - g } else { 0.0 };
            for a in 0..self.actions {
                let ev: f64 = self.transitions(s, a).iter().map(|&(n, p)| p * v[n]).sum();
                out[s * self.actions + a] = base + g * ev;
            }
        }
        debug_assert_eq!(q.len(), out.len());
    }
}

#[derive(Debug, Clone)]
pub struct Occupancy {
    /// `[S×A]`
    pub q: Vec<f64>,
    /// Sup-norm of `T(Q) − Q` at the returned `Q`.
    pub residual: f64,
    pub sweeps: usize,
}

fn state_values(q: &[f64], policy: &[f64], v: &mut [f64], actions: usize) {
    for (s, vs) in v.iter_mut().enumerate() {
        *vs = (0..actions).map(|a| policy[s * actions + a] * q[s * actions + a]).sum();
    }
}

/// Goal occupancy `Q^π` by fixed-point iteration; `policy` is `[S×A]`.
pub fn occupancy_q(mdp: &TabularMdp, policy: &[f64]) -> Result<Occupancy> {
    let (ns, na) = (mdp.states, mdp.actions);
    if policy.len() != ns * na {
        return shape_err(format!("policy has {} entries for S={ns}, A={na}", policy.len()));
    }
    for (s, row) in policy.chunks(na).enumerate() {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract(format!("policy row {s} is not a distribution (sum {total})")));
        }
    }
    let mut q: Vec<f64> = (0..ns * na).map(|i| if mdp.closed[i / na] { 1.0 } else { 0.0 }).collect();
    let mut next = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    for sweep in 1..=MAX_SWEEPS {
        state_values(&q, policy, &mut v, na);
        mdp.backup(&q, &v, &mut next);
        let residual = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut q, &mut next);
        if residual < RESIDUAL_TOL {
            // Report the residual of the returned Q itself.
            state_values(&q, policy, &mut v, na);
            mdp.backup(&q, &v, &mut next);
            let residual = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            return Ok(Occupancy {
                q,
                residual,
                sweeps: sweep,
            });
        }
    }
    Err(Error::Contract("occupancy iteration did not converge".into()))
}

pub fn uniform_policy(states: usize, actions: usize) -> Vec<f64> {
    vec![1.0 / actions as f64; states * actions]
}

/// Index of grid state `(y, x, heading)`.
pub fn grid_state_index(size: usize, y: usize, x: usize, dir: usize) -> usize {
    (y * size + x) * 4 + dir
}

/// Inverse of [`grid_state_index`].
pub fn grid_state_of(size: usize, s: usize) -> (usize, usize, usize) {
    let cell = s / 4;
    (cell / size, cell % size, s % 4)
}

/// Tabular model of the empty `size×size` grid: one state per
/// `(cell, heading)`, transitions read off the environment itself, goal
/// cells absorbing.
pub fn gridworld_to_tabular(size: usize, gamma: f64) -> Result<TabularMdp> {
    if size < 2 {
        return Err(Error::Config(format!("grid size {size} is too small to enumerate")));
    }
    let states = size * size * 4;
    let mut env = GridEnv::new(size, usize::MAX, GridReward::Sparse);
    let mut next = Vec::with_capacity(states * GRID_ACTIONS);
    let mut goal = vec![false; states];
    for s in 0..states {
        let (y, x, dir) = grid_state_of(size, s);
        env.set_state(y, x, dir);
        goal[s] = env.at_goal();
        for a in 0..GRID_ACTIONS {
            if goal[s] {
                next.push(vec![(s, 1.0)]);
                continue;
            }
            env.set_state(y, x, dir);
            env.step_one(a)?;
            let (ny, nx, nd) = env.state();
            next.push(vec![(grid_state_index(size, ny, nx, nd), 1.0)]);
        }
    }
    TabularMdp::from_sparse(states, GRID_ACTIONS, next, goal, gamma)
}

/// Environment observation for grid state `s`.
pub fn grid_observation(size: usize, s: usize) -> Vec<f64> {
    let mut env = GridEnv::new(size, usize::MAX, GridReward::Sparse);
    let (y, x, dir) = grid_state_of(size, s);
    env.set_state(y, x, dir);
    let mut obs = vec![0.0; env.obs_dim()];
    env.observe(&mut obs);
    obs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankAgreement {
    pub rho: f64,
    /// Set when either input is constant; `rho` is then 0.
    pub constant_input: bool,
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation over all `(s, a)` entries.
pub fn rank_agreement(learned: &[f64], oracle: &[f64]) -> Result<RankAgreement> {
    if learned.len() != oracle.len() || learned.is_empty() {
        return shape_err(format!("rank agreement over {} and {} entries", learned.len(), oracle.len()));
    }
    let (ra, rb) = (average_ranks(learned), average_ranks(oracle));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(RankAgreement {
            rho: 0.0,
            constant_input: true,
        });
    }
    Ok(RankAgreement {
        rho: cov / (va.sqrt() * vb.sqrt()),
        constant_input: false,
    })
}

/// Writes `s,a,q` rows with a header.
pub fn write_q_csv<W: Write>(mut w: W, q: &[f64], actions: usize) -> Result<()> {
    writeln!(w, "s,a,q")?;
    for (i, v) in q.iter().enumerate() {
        writeln!(w, "{},{},{v:.17e}", i / actions, i % actions)?;
    }
    Ok(())
}
