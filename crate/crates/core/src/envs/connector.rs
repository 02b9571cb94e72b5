use rand::Rng;

use super::{AgentActions, Env, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spaces::ActionSpace;

/// stay, up, right, down, left
pub const CONNECTOR_ACTIONS: usize = 5;
pub const CONNECTOR_HORIZON_CAP: usize = 225;
const STEP_PENALTY: f64 = 0.03;
const MOVES: [(i64, i64); CONNECTOR_ACTIONS] = [(0, 0), (-1, 0), (0, 1), (1, 0), (0, -1)];
const PLACEMENT_ATTEMPTS: usize = 50;

/// Per-agent reward; the team reward is the sum over agents, given to every
/// agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectorReward {
    /// +1 on the connecting step, −0.03 per step while unconnected.
    Dense,
    /// −Manhattan distance to the target.
    NegativeDistance,
    /// +1 on the connecting step.
    OnConnection,
    /// +1 for everyone on the step all agents are connected.
    Sparse,
}

impl ConnectorReward {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "negative_distance" => Ok(Self::NegativeDistance),
            "on_connection" => Ok(Self::OnConnection),
            "sparse" => Ok(Self::Sparse),
            _ => Err(Error::Config(format!("unknown connector reward variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectorGoal {
    /// Own Manhattan distance to target over `2(N−1)`; target 0.
    Distance,
    /// Team mean of the per-agent distances; target 0.
    TotalDistance,
    /// Fraction of agents connected; target 1.
    AllConnected,
    /// Own `(x, y)` cell; target is the own target cell.
    TargetPositions,
}

impl ConnectorGoal {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Self::Distance),
            "total_distance" => Ok(Self::TotalDistance),
            "all_connected" => Ok(Self::AllConnected),
            "target_positions" => Ok(Self::TargetPositions),
            _ => Err(Error::Config(format!("unknown connector goal variant `{s}`"))),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::TargetPositions => 2,
            _ => 1,
        }
    }
}

/// Cooperative routing on an `N×N` grid: every agent draws a path from its
/// start cell to its target cell. Visited cells become permanent trail
/// obstacles, other agents' targets are impassable, and connected agents
/// stop moving.
///
/// Moves are simultaneous. A move that leaves the grid or enters a trail
/// or a foreign target becomes a stay; agents contending for one cell all
/// stay. The episode ends when everyone is connected, when no unconnected
/// agent has a legal move, or at the horizon.
///
/// Per-agent observation: a `(2r+1)²` window centred on the agent with
/// channels obstacle / own target / other targets, then own `(x, y)` and
/// target `(x, y)` scaled to `[0, 1]`, then the connected flag.
#[derive(Debug, Clone)]
pub struct ConnectorEnv {
    size: usize,
    n: usize,
    horizon: usize,
    radius: usize,
    reward: ConnectorReward,
    goal: ConnectorGoal,
    pos: Vec<(usize, usize)>,
    target: Vec<(usize, usize)>,
    /// Trail owner per cell, row-major.
    owner: Vec<Option<usize>>,
    connected: Vec<bool>,
    t: usize,
}

impl ConnectorEnv {
    pub fn new(size: usize, agents: usize, horizon: usize, radius: usize, reward: ConnectorReward, goal: ConnectorGoal) -> Self {
        Self {
            size,
            n: agents,
            horizon,
            radius,
            reward,
            goal,
            pos: Vec::new(),
            target: Vec::new(),
            owner: vec![None; size * size],
            connected: vec![false; agents],
            t: 0,
        }
    }

    /// `(row, col)` per agent.
    pub fn positions(&self) -> &[(usize, usize)] {
        &self.pos
    }

    pub fn targets(&self) -> &[(usize, usize)] {
        &self.target
    }

    pub fn connected(&self) -> &[bool] {
        &self.connected
    }

    pub fn trail_owner(&self, row: usize, col: usize) -> Option<usize> {
        self.owner[row * self.size + col]
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn goal_variant(&self) -> ConnectorGoal {
        self.goal
    }

    /// Places agents at `starts` with the given targets.
    pub fn set_instance(&mut self, starts: &[(usize, usize)], targets: &[(usize, usize)]) {
        assert_eq!(starts.len(), self.n);
        assert_eq!(targets.len(), self.n);
        self.pos = starts.to_vec();
        self.target = targets.to_vec();
        self.owner = vec![None; self.size * self.size];
        for (i, &(r, c)) in starts.iter().enumerate() {
            self.owner[r * self.size + c] = Some(i);
        }
        self.connected = starts.iter().zip(targets).map(|(s, t)| s == t).collect();
        self.t = 0;
    }

    fn neighbours(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = ((cell / self.size) as i64, (cell % self.size) as i64);
        MOVES[1..].iter().filter_map(move |&(dr, dc)| self.cell_at(r + dr, c + dc))
    }

    fn cell_at(&self, r: i64, c: i64) -> Option<usize> {
        let n = self.size as i64;
        (r >= 0 && c >= 0 && r < n && c < n).then(|| (r * n + c) as usize)
    }

    fn manhattan(a: (usize, usize), b: (usize, usize)) -> usize {
        a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
    }

    /// Random-walk instance generator. Each agent's target is the end of a
    /// self-avoiding walk that avoids earlier agents' walks, so the walks
    /// themselves form a conflict-free solution.
    fn generate(&mut self, rng: &mut StreamRng) {
        let cells = self.size * self.size;
        'instance: loop {
            let mut used = vec![false; cells];
            let mut starts = Vec::with_capacity(self.n);
            let mut targets = Vec::with_capacity(self.n);
            for _ in 0..self.n {
                let mut placed = false;
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let free: Vec<usize> = (0..cells).filter(|&c| !used[c]).collect();
                    if free.is_empty() {
                        continue 'instance;
                    }
                    let start = free[rng.gen_range(0..free.len())];
                    let steps = rng.gen_range(2..=2 * self.size);
                    let mut on_path = used.clone();
                    on_path[start] = true;
                    let mut path = vec![start];
                    for _ in 0..steps {
                        let cur = *path.last().unwrap();
                        let options: Vec<usize> = self.neighbours(cur).filter(|&c| !on_path[c]).collect();
                        if options.is_empty() {
                            break;
                        }
                        let next = options[rng.gen_range(0..options.len())];
                        on_path[next] = true;
                        path.push(next);
                    }
                    let end = *path.last().unwrap();
                    let rc = |c: usize| (c / self.size, c % self.size);
                    if Self::manhattan(rc(start), rc(end)) >= 2 {
                        for &c in &path {
                            used[c] = true;
                        }
                        starts.push(rc(start));
                        targets.push(rc(end));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    continue 'instance;
                }
            }
            self.set_instance(&starts, &targets);
            return;
        }
    }

    /// Whether agent `i` may enter `cell`.
    fn enterable(&self, i: usize, cell: usize) -> bool {
        if self.owner[cell].is_some() {
            return false;
        }
        let rc = (cell / self.size, cell % self.size);
        self.target.iter().enumerate().all(|(j, &t)| j == i || t != rc)
    }

    fn has_legal_move(&self, i: usize) -> bool {
        let (r, c) = self.pos[i];
        self.neighbours(r * self.size + c).any(|cell| self.enterable(i, cell))
    }

    fn normalized_distance(&self, i: usize) -> f64 {
        Self::manhattan(self.pos[i], self.target[i]) as f64 / (2 * (self.size - 1)) as f64
    }

    pub fn step_agents(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if actions.len() != self.n {
            return Err(Error::Contract(format!(
                "{} actions for {} connector agents",
                actions.len(),
                self.n
            )));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= CONNECTOR_ACTIONS) {
            return Err(Error::Contract(format!(
                "connector action {a} outside 0..{CONNECTOR_ACTIONS}"
            )));
        }
        let before = self.connected.clone();
        let mut proposal: Vec<Option<usize>> = vec![None; self.n];
        for i in 0..self.n {
            if self.connected[i] || actions[i] == 0 {
                continue;
            }
            let (dr, dc) = MOVES[actions[i]];
            let (r, c) = self.pos[i];
            if let Some(cell) = self.cell_at(r as i64 + dr, c as i64 + dc) {
                if self.enterable(i, cell) {
                    proposal[i] = Some(cell);
                }
            }
        }
        for i in 0..self.n {
            if let Some(cell) = proposal[i] {
                if (0..self.n).any(|j| j != i && proposal[j] == Some(cell)) {
                    // Every contender for the cell stays; clear them all.
                    for p in proposal.iter_mut().filter(|p| **p == Some(cell)) {
                        *p = None;
                    }
                }
            }
        }
        for (i, p) in proposal.iter().enumerate() {
            if let Some(cell) = *p {
                self.owner[cell] = Some(i);
                self.pos[i] = (cell / self.size, cell % self.size);
                if self.pos[i] == self.target[i] {
                    self.connected[i] = true;
                }
            }
        }
        self.t += 1;

        let all = self.connected.iter().all(|&c| c);
        let team: f64 = (0..self.n)
            .map(|i| {
                let newly = self.connected[i] && !before[i];
                match self.reward {
                    ConnectorReward::Dense => {
                        if newly {
                            1.0
                        } else if !self.connected[i] {
                            -STEP_PENALTY
                        } else {
                            0.0
                        }
                    }
                    ConnectorReward::NegativeDistance => -(Self::manhattan(self.pos[i], self.target[i]) as f64),
                    ConnectorReward::OnConnection => f64::from(u8::from(newly)),
                    ConnectorReward::Sparse => f64::from(u8::from(all)),
                }
            })
            .sum();
        let stuck = (0..self.n).filter(|&i| !self.connected[i]).all(|i| !self.has_legal_move(i));
        Ok(StepOutcome {
            rewards: vec![team; self.n],
            done: all || stuck || self.t >= self.horizon,
            success: all,
        })
    }
}

impl Env for ConnectorEnv {
    fn agents(&self) -> usize {
        self.n
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.radius + 1;
        3 * w * w + 5
    }

    fn goal_dim(&self) -> usize {
        self.goal.dim()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(CONNECTOR_ACTIONS)
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        self.generate(rng);
    }

    fn observe(&self, out: &mut [f64]) {
        let w = 2 * self.radius + 1;
        let cells = w * w;
        let dim = self.obs_dim();
        let scale = (self.size - 1) as f64;
        out.fill(0.0);
        for i in 0..self.n {
            let o = &mut out[i * dim..(i + 1) * dim];
            let (r0, c0) = self.pos[i];
            for a in 0..w {
                for b in 0..w {
                    let k = a * w + b;
                    let r = r0 as i64 + a as i64 - self.radius as i64;
                    let c = c0 as i64 + b as i64 - self.radius as i64;
                    let Some(cell) = self.cell_at(r, c) else {
                        o[k] = 1.0;
                        continue;
                    };
                    if self.owner[cell].is_some() {
                        o[k] = 1.0;
                    }
                    let rc = (cell / self.size, cell % self.size);
                    for (j, &t) in self.target.iter().enumerate() {
                        if t == rc {
                            o[if j == i { cells + k } else { 2 * cells + k }] = 1.0;
                        }
                    }
                }
            }
            let (tr, tc) = self.target[i];
            o[3 * cells] = c0 as f64 / scale;
            o[3 * cells + 1] = r0 as f64 / scale;
            o[3 * cells + 2] = tc as f64 / scale;
            o[3 * cells + 3] = tr as f64 / scale;
            o[3 * cells + 4] = f64::from(u8::from(self.connected[i]));
        }
    }

    fn achieved_goal(&self, out: &mut [f64]) {
        match self.goal {
            ConnectorGoal::Distance => {
                for i in 0..self.n {
                    out[i] = self.normalized_distance(i);
                }
            }
            ConnectorGoal::TotalDistance => {
                let mean = (0..self.n).map(|i| self.normalized_distance(i)).sum::<f64>() / self.n as f64;
                out[..self.n].fill(mean);
            }
            ConnectorGoal::AllConnected => {
                let frac = self.connected.iter().filter(|&&c| c).count() as f64 / self.n as f64;
                out[..self.n].fill(frac);
            }
            ConnectorGoal::TargetPositions => {
                for (i, &(r, c)) in self.pos.iter().enumerate() {
                    out[2 * i] = c as f64;
                    out[2 * i + 1] = r as f64;
                }
            }
        }
    }

    fn target_goal(&self, out: &mut [f64]) {
        match self.goal {
            ConnectorGoal::Distance | ConnectorGoal::TotalDistance => out[..self.n].fill(0.0),
            ConnectorGoal::AllConnected => out[..self.n].fill(1.0),
            ConnectorGoal::TargetPositions => {
                for (i, &(r, c)) in self.target.iter().enumerate() {
                    out[2 * i] = c as f64;
                    out[2 * i + 1] = r as f64;
                }
            }
        }
    }

    fn step(&mut self, actions: AgentActions<'_>) -> Result<StepOutcome> {
        match actions {
            AgentActions::Discrete(a) => self.step_agents(a),
            AgentActions::Continuous(_) => Err(Error::Contract("connector expects discrete actions".into())),
        }
    }
}
