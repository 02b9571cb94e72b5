use super::{AgentActions, Env, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spaces::ActionSpace;

/// rotate-left, rotate-right, forward
pub const GRID_ACTIONS: usize = 3;
/// Side of the egocentric view.
pub const GRID_VIEW: usize = 5;
/// `(dy, dx)` per heading: east, south, west, north.
pub const HEADINGS: [(i64, i64); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];

const STEP_PENALTY: f64 = 0.01;
const BUMP_PENALTY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridReward {
    /// +1 on reaching the goal.
    Sparse,
    /// Sparse plus −0.01 per step and −0.01 per wall bump.
    Shaped,
}

impl GridReward {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "shaped" => Ok(Self::Shaped),
            _ => Err(Error::Config(format!("unknown grid reward variant `{s}`"))),
        }
    }
}

/// Empty `N×N` room. The agent starts in the top-left corner facing east
/// and must reach the bottom-right corner.
///
/// Observation: a `5×5` egocentric crop (agent at the bottom centre,
/// looking up the crop) with a wall channel and a goal channel, then the
/// heading one-hot, then the agent's `(y, x)` scaled to `[0, 1]`.
/// Achieved goal: the agent's `(y, x)` cell coordinates.
#[derive(Debug, Clone)]
pub struct GridEnv {
    size: usize,
    horizon: usize,
    reward: GridReward,
    y: usize,
    x: usize,
    dir: usize,
    t: usize,
}

impl GridEnv {
    pub fn new(size: usize, horizon: usize, reward: GridReward) -> Self {
        Self {
            size,
            horizon,
            reward,
            y: 0,
            x: 0,
            dir: 0,
            t: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        (self.size - 1, self.size - 1)
    }

    /// `(y, x, heading)`
    pub fn state(&self) -> (usize, usize, usize) {
        (self.y, self.x, self.dir)
    }

    /// Places the agent; the step counter restarts.
    pub fn set_state(&mut self, y: usize, x: usize, dir: usize) {
        assert!(y < self.size && x < self.size && dir < 4, "state outside the grid");
        self.y = y;
        self.x = x;
        self.dir = dir;
        self.t = 0;
    }

    pub fn at_goal(&self) -> bool {
        (self.y, self.x) == self.goal_cell()
    }

    fn walkable(&self, y: i64, x: i64) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.size && (x as usize) < self.size
    }

    /// Single-agent step with a plain action index.
    pub fn step_one(&mut self, action: usize) -> Result<StepOutcome> {
        let mut bumped = false;
        match action {
            0 => self.dir = (self.dir + 3) % 4,
            1 => self.dir = (self.dir + 1) % 4,
            2 => {
                let (dy, dx) = HEADINGS[self.dir];
                let (ny, nx) = (self.y as i64 + dy, self.x as i64 + dx);
                if self.walkable(ny, nx) {
                    self.y = ny as usize;
                    self.x = nx as usize;
                } else {
                    bumped = true;
                }
            }
            a => return Err(Error::Contract(format!("grid action {a} outside 0..{GRID_ACTIONS}"))),
        }
        self.t += 1;
        let success = self.at_goal();
        let mut r = if success { 1.0 } else { 0.0 };
        if self.reward == GridReward::Shaped {
            r -= STEP_PENALTY;
            if bumped {
                r -= BUMP_PENALTY;
            }
        }
        Ok(StepOutcome {
            rewards: vec![r],
            done: success || self.t >= self.horizon,
            success,
        })
    }
}

impl Env for GridEnv {
    fn agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        2 * GRID_VIEW * GRID_VIEW + 4 + 2
    }

    fn goal_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(GRID_ACTIONS)
    }

    fn reset(&mut self, _rng: &mut StreamRng) {
        self.set_state(0, 0, 0);
    }

    fn observe(&self, out: &mut [f64]) {
        out.fill(0.0);
        let (fy, fx) = HEADINGS[self.dir];
        let (ry, rx) = HEADINGS[(self.dir + 1) % 4];
        let half = (GRID_VIEW / 2) as i64;
        let cells = GRID_VIEW * GRID_VIEW;
        let goal = self.goal_cell();
        for i in 0..GRID_VIEW {
            let ahead = (GRID_VIEW - 1 - i) as i64;
            for j in 0..GRID_VIEW {
                let side = j as i64 - half;
                let y = self.y as i64 + ahead * fy + side * ry;
                let x = self.x as i64 + ahead * fx + side * rx;
                let c = i * GRID_VIEW + j;
                if !self.walkable(y, x) {
                    out[c] = 1.0;
                } else if (y as usize, x as usize) == goal {
                    out[cells + c] = 1.0;
                }
            }
        }
        out[2 * cells + self.dir] = 1.0;
        let scale = (self.size - 1) as f64;
        out[2 * cells + 4] = self.y as f64 / scale;
        out[2 * cells + 5] = self.x as f64 / scale;
    }

    fn achieved_goal(&self, out: &mut [f64]) {
        out[0] = self.y as f64;
        out[1] = self.x as f64;
    }

    fn target_goal(&self, out: &mut [f64]) {
        let (y, x) = self.goal_cell();
        out[0] = y as f64;
        out[1] = x as f64;
    }

    fn step(&mut self, actions: AgentActions<'_>) -> Result<StepOutcome> {
        match actions {
            AgentActions::Discrete([a]) => self.step_one(*a),
            _ => Err(Error::Contract("grid expects one discrete action".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_onto_goal_ends_with_reward() {
        let mut env = GridEnv::new(5, 100, GridReward::Sparse);
        env.set_state(4, 3, 0);
        let out = env.step_one(2).unwrap();
        assert!(out.done && out.success);
        assert_eq!(out.rewards, vec![1.0]);
    }

    #[test]
    fn wall_bump_keeps_position_and_costs_in_shaped_variant() {
        let mut env = GridEnv::new(5, 100, GridReward::Shaped);
        env.set_state(0, 0, 3);
        let out = env.step_one(2).unwrap();
        assert_eq!(env.state(), (0, 0, 3));
        assert!((out.rewards[0] + 0.02).abs() < 1e-15);
        let out = env.step_one(1).unwrap();
        assert!((out.rewards[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn horizon_ends_without_success() {
        let mut env = GridEnv::new(5, 3, GridReward::Sparse);
        env.set_state(0, 0, 0);
        assert!(!env.step_one(0).unwrap().done);
        assert!(!env.step_one(0).unwrap().done);
        let out = env.step_one(0).unwrap();
        assert!(out.done && !out.success);
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = GridEnv::new(5, 10, GridReward::Sparse);
        assert!(env.step_one(3).is_err());
    }

    #[test]
    fn view_marks_walls_ahead_and_goal() {
        let mut env = GridEnv::new(5, 10, GridReward::Sparse);
        // Facing east from (4, 2): goal two cells ahead, wall to the right.
        env.set_state(4, 2, 0);
        let mut obs = vec![0.0; env.obs_dim()];
        env.observe(&mut obs);
        let cells = GRID_VIEW * GRID_VIEW;
        // Two ahead, centre column → row 2, col 2.
        assert_eq!(obs[cells + 2 * GRID_VIEW + 2], 1.0);
        // One to the right (south) is outside the grid.
        assert_eq!(obs[4 * GRID_VIEW + 3], 1.0);
        // Own cell is open.
        assert_eq!(obs[4 * GRID_VIEW + 2], 0.0);
        assert_eq!(obs[2 * cells], 1.0);
    }
}
