use super::{clip_action, expect_continuous, Action, ActionSpace, Env, EnvSpec, Transition};
use crate::numkit::Rng;
use crate::{Error, Result};

const SPEC: EnvSpec = EnvSpec {
    name: "pointmass",
    obs_dim: 6,
    action: ActionSpace::Continuous(2),
    max_episode_steps: 100,
    reward_note: "-|p - goal|^2 - 0.01|a|^2 per step",
};

/// Damped point mass in the plane steered toward a goal.
///
/// Observation `(p, v, goal)`; action is a force in `[-1, 1]²`.
/// `v' = 0.9 v + 0.1 a`, `p' = p + 0.05 v'`, positions clamped to `[-5, 5]²`.
/// Start position and goal are drawn uniformly from `[-0.5, 0.5]²`.
#[derive(Clone, Debug)]
pub struct PointMass {
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
    ended: bool,
}

pub const START_RANGE: f64 = 0.5;
pub const POS_LIMIT: f64 = 5.0;

impl PointMass {
    pub fn new() -> Self {
        Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
            ended: true,
        }
    }

    /// Places the mass at an explicit state (tests and diagnostics).
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.t = 0;
        self.ended = false;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.goal[0],
            self.goal[1],
        ]
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &SPEC
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        let mut draw = || rng.uniform_range(-START_RANGE, START_RANGE);
        let pos = [draw(), draw()];
        let goal = [draw(), draw()];
        self.set_state(pos, [0.0; 2], goal);
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.ended {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(expect_continuous(action, 2)?);
        let state = self.observation();
        for i in 0..2 {
            self.vel[i] = 0.9 * self.vel[i] + 0.1 * a[i];
            self.pos[i] = (self.pos[i] + 0.05 * self.vel[i]).clamp(-POS_LIMIT, POS_LIMIT);
        }
        let dist2: f64 = (0..2).map(|i| (self.pos[i] - self.goal[i]).powi(2)).sum();
        let effort: f64 = a.iter().map(|x| x * x).sum();
        self.t += 1;
        let truncated = self.t >= SPEC.max_episode_steps;
        self.ended = truncated;
        Ok(Transition {
            state,
            action: action.clone(),
            reward: -dist2 - 0.01 * effort,
            next_state: self.observation(),
            done: false,
            truncated,
            success: false,
        })
    }
}
