use std::f64::consts::PI;

use super::{clip_action, expect_continuous, Action, ActionSpace, Env, EnvSpec, Transition};
use crate::numkit::Rng;
use crate::{Error, Result};

const SPEC: EnvSpec = EnvSpec {
    name: "pendulum_lite",
    obs_dim: 3,
    action: ActionSpace::Continuous(1),
    max_episode_steps: 200,
    reward_note: "-(wrap(theta)^2 + 0.1 omega^2 + 0.001 a^2) on the pre-step state",
};

const DT: f64 = 0.05;

/// Undamped pendulum that must be brought to rest at `θ = 0`.
///
/// `ω' = ω + 0.05 (−10 sin θ + 7a)`, `θ' = θ + 0.05 ω'` (semi-implicit Euler).
/// Observation `(cos θ, sin θ, ω)`. Initial `θ ~ U[−π, π]`, `ω ~ U[−1, 1]`.
#[derive(Clone, Debug)]
pub struct PendulumLite {
    theta: f64,
    omega: f64,
    t: usize,
    ended: bool,
}

/// Angle wrapped into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut x = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI {
        x = PI;
    }
    x
}

impl PendulumLite {
    pub fn new() -> Self {
        Self {
            theta: 0.0,
            omega: 0.0,
            t: 0,
            ended: true,
        }
    }

    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = theta;
        self.omega = omega;
        self.t = 0;
        self.ended = false;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.omega)
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

impl Default for PendulumLite {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PendulumLite {
    fn spec(&self) -> &EnvSpec {
        &SPEC
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        let theta = rng.uniform_range(-PI, PI);
        let omega = rng.uniform_range(-1.0, 1.0);
        self.set_state(theta, omega);
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.ended {
            return Err(Error::StepAfterDone);
        }
        let a = clip_action(expect_continuous(action, 1)?)[0];
        let state = self.observation();
        let reward = -(wrap_angle(self.theta).powi(2) + 0.1 * self.omega.powi(2) + 0.001 * a * a);
        self.omega += DT * (-10.0 * self.theta.sin() + 7.0 * a);
        self.theta = wrap_angle(self.theta + DT * self.omega);
        self.t += 1;
        let truncated = self.t >= SPEC.max_episode_steps;
        self.ended = truncated;
        Ok(Transition {
            state,
            action: action.clone(),
            reward,
            next_state: self.observation(),
            done: false,
            truncated,
            success: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_equilibrium() {
        let mut env = PendulumLite::new();
        env.set_state(PI, 0.0);
        let tr = env.step(&Action::Continuous(vec![0.0])).unwrap();
        let (theta, omega) = env.state();
        assert!((wrap_angle(theta).abs() - PI).abs() < 1e-12);
        assert!(omega.abs() < 1e-12);
        assert!((tr.reward + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn declared_dynamics() {
        let mut env = PendulumLite::new();
        env.set_state(0.4, -0.3);
        let tr = env.step(&Action::Continuous(vec![3.0])).unwrap();
        let omega = -0.3 + 0.05 * (-10.0 * 0.4f64.sin() + 7.0);
        let theta = 0.4 + 0.05 * omega;
        let (th, om) = env.state();
        assert!((th - theta).abs() < 1e-12);
        assert_eq!(om, omega);
        assert!((tr.reward + (0.16 + 0.1 * 0.09 + 0.001)).abs() < 1e-12);
    }

    #[test]
    fn random_actions_stay_bounded() {
        let mut env = PendulumLite::new();
        let mut rng = Rng::new(42);
        let mut seed = 0;
        env.reset(seed);
        for _ in 0..10_000 {
            let a = rng.uniform_range(-1.0, 1.0);
            let tr = env.step(&Action::Continuous(vec![a])).unwrap();
            assert!(env.state().1.abs() < 50.0);
            if tr.truncated {
                seed += 1;
                env.reset(seed);
            }
        }
    }
}
