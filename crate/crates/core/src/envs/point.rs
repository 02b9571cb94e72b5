use rand::Rng;

use super::{AgentActions, Env, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spaces::ActionSpace;

pub const POINT_DT: f64 = 0.1;
/// Half-width of the square arena `[−1, 1]²`.
pub const POINT_ARENA: f64 = 1.0;
pub const POINT_SUCCESS_RADIUS: f64 = 0.1;
const TARGET: [f64; 2] = [0.5, 0.5];
/// Starts closer than this to the target are redrawn.
const MIN_START_DIST: f64 = 2.0 * POINT_SUCCESS_RADIUS;

/// Point mass in `[−1, 1]²` driven by velocity commands toward a fixed
/// target. Observation `(pos, target)`, achieved goal `pos`, baseline
/// reward `−‖pos − target‖`.
#[derive(Debug, Clone)]
pub struct PointEnv {
    horizon: usize,
    pos: [f64; 2],
    t: usize,
}

impl PointEnv {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            pos: [0.0, 0.0],
            t: 0,
        }
    }

    pub fn target(&self) -> [f64; 2] {
        TARGET
    }

    pub fn pos(&self) -> [f64; 2] {
        self.pos
    }

    pub fn set_pos(&mut self, pos: [f64; 2]) {
        self.pos = pos;
        self.t = 0;
    }

    fn dist(&self) -> f64 {
        ((self.pos[0] - TARGET[0]).powi(2) + (self.pos[1] - TARGET[1]).powi(2)).sqrt()
    }
}

impl Env for PointEnv {
    fn agents(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn goal_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn reset(&mut self, rng: &mut StreamRng) {
        loop {
            let p = [
                rng.gen_range(-POINT_ARENA..POINT_ARENA),
                rng.gen_range(-POINT_ARENA..POINT_ARENA),
            ];
            self.set_pos(p);
            if self.dist() >= MIN_START_DIST {
                break;
            }
        }
    }

    fn observe(&self, out: &mut [f64]) {
        out[..2].copy_from_slice(&self.pos);
        out[2..4].copy_from_slice(&TARGET);
    }

    fn achieved_goal(&self, out: &mut [f64]) {
        out[..2].copy_from_slice(&self.pos);
    }

    fn target_goal(&self, out: &mut [f64]) {
        out[..2].copy_from_slice(&TARGET);
    }

    fn step(&mut self, actions: AgentActions<'_>) -> Result<StepOutcome> {
        let AgentActions::Continuous(&[ax, ay]) = actions else {
            return Err(Error::Contract("point reacher expects one 2-d action".into()));
        };
        for (p, a) in self.pos.iter_mut().zip([ax, ay]) {
            *p = (*p + POINT_DT * a.clamp(-1.0, 1.0)).clamp(-POINT_ARENA, POINT_ARENA);
        }
        self.t += 1;
        let d = self.dist();
        let success = d < POINT_SUCCESS_RADIUS;
        Ok(StepOutcome {
            rewards: vec![-d],
            done: success || self.t >= self.horizon,
            success,
        })
    }
}
