//! Kinematic two-link planar arm reaching for a point goal.

use std::f64::consts::PI;

use diffnet::Tensor;
use rand::{Rng, RngCore};

use super::pendulum::wrap_angle;
use super::{Action, ActionSpace, EnvId, Environment, StepOutcome};
use crate::error::Result;

pub const LINKS: (f64, f64) = (0.1, 0.1);
pub const REACHER_DT: f64 = 0.1;
pub const REACHER_HORIZON: usize = 50;
pub const GOAL_RADIUS: f64 = 0.02;
pub const REACHER_ALPHA: f64 = 0.01;
pub const OBS_DIM: usize = 11;

pub fn forward_kinematics(theta: [f64; 2]) -> [f64; 2] {
    let (l1, l2) = LINKS;
    let a = theta[0] + theta[1];
    [l1 * theta[0].cos() + l2 * a.cos(), l1 * theta[0].sin() + l2 * a.sin()]
}

/// Elbow-positive joint angles placing the tip at `p` (clamped into reach).
pub fn inverse_kinematics(p: [f64; 2]) -> [f64; 2] {
    let (l1, l2) = LINKS;
    let r2 = p[0] * p[0] + p[1] * p[1];
    let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let t2 = c2.acos();
    let t1 = p[1].atan2(p[0]) - (l2 * t2.sin()).atan2(l1 + l2 * c2);
    [wrap_angle(t1), t2]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReacherState {
    pub theta: [f64; 2],
    /// Joint velocities from the last command.
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
}

impl ReacherState {
    pub fn fingertip(&self) -> [f64; 2] {
        forward_kinematics(self.theta)
    }

    pub fn goal_distance(&self) -> f64 {
        let p = self.fingertip();
        (p[0] - self.goal[0]).hypot(p[1] - self.goal[1])
    }

    /// `[cos θ₁, cos θ₂, sin θ₁, sin θ₂, goal, θ̇, tip − goal, 0]`.
    pub fn observation(&self) -> Tensor {
        let p = self.fingertip();
        let [t1, t2] = self.theta;
        Tensor::vector(vec![
            t1.cos(),
            t2.cos(),
            t1.sin(),
            t2.sin(),
            self.goal[0],
            self.goal[1],
            self.velocity[0],
            self.velocity[1],
            p[0] - self.goal[0],
            p[1] - self.goal[1],
            0.0,
        ])
    }
}

/// Distance plus effort penalty.
pub fn hand_reward(state: &ReacherState, action: &[f64]) -> f64 {
    let effort = action.iter().map(|a| a * a).sum::<f64>().sqrt();
    -(state.goal_distance() + REACHER_ALPHA * effort)
}

#[derive(Debug, Clone)]
pub struct Reacher {
    state: ReacherState,
    horizon: usize,
    t: usize,
}

impl Default for Reacher {
    fn default() -> Self {
        Self::new()
    }
}

impl Reacher {
    pub fn new() -> Self {
        Self {
            state: ReacherState { theta: [0.0, 0.0], velocity: [0.0, 0.0], goal: [0.0, 0.1] },
            horizon: REACHER_HORIZON,
            t: 0,
        }
    }

    pub fn state(&self) -> ReacherState {
        self.state
    }

    pub fn set_state(&mut self, state: ReacherState) -> Tensor {
        self.state = state;
        self.t = 0;
        state.observation()
    }

    fn command(action: &Action) -> [f64; 2] {
        match action {
            Action::Continuous(v) => [v[0], v[1]],
            Action::Discrete(_) => unreachable!("validated"),
        }
    }
}

impl Environment for Reacher {
    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn id(&self) -> EnvId {
        EnvId::Reacher
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![OBS_DIM]
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon.max(1);
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor {
        let reach = LINKS.0 + LINKS.1;
        let theta = [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)];
        loop {
            let r = reach * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(-PI..PI);
            let state = ReacherState { theta, velocity: [0.0, 0.0], goal: [r * phi.cos(), r * phi.sin()] };
            if state.goal_distance() >= GOAL_RADIUS {
                return self.set_state(state);
            }
        }
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.action_space().validate(action)?;
        let a = Self::command(action);
        let s = &mut self.state;
        s.theta = [wrap_angle(s.theta[0] + REACHER_DT * a[0]), wrap_angle(s.theta[1] + REACHER_DT * a[1])];
        s.velocity = a;
        self.t += 1;
        let success = s.goal_distance() < GOAL_RADIUS;
        Ok(StepOutcome {
            observation: s.observation(),
            reward: if success { 1.0 } else { 0.0 },
            done: success || self.t >= self.horizon,
            success,
        })
    }

    /// Arm at rest with its tip on the goal.
    fn goal_observation(&self) -> Tensor {
        self.goal_observation_for(&self.state.observation())
    }

    fn goal_observation_for(&self, observation: &Tensor) -> Tensor {
        let d = observation.data();
        let goal = [d[4], d[5]];
        ReacherState { theta: inverse_kinematics(goal), velocity: [0.0, 0.0], goal }.observation()
    }

    fn hand_reward(&self, action: &Action) -> Option<f64> {
        Some(hand_reward(&self.state, &Self::command(action)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kinematics_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let r = 0.2 * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(-PI..PI);
            let p = [r * phi.cos(), r * phi.sin()];
            let q = forward_kinematics(inverse_kinematics(p));
            assert!((q[0] - p[0]).abs() < 1e-7 && (q[1] - p[1]).abs() < 1e-7, "{p:?} {q:?}");
        }
    }

    #[test]
    fn stretched_arm_reaches_full_length() {
        let p = forward_kinematics([0.0, 0.0]);
        assert!((p[0] - 0.2).abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn joint_step_and_success() {
        let mut env = Reacher::new();
        let goal = forward_kinematics([0.1, 0.0]);
        env.set_state(ReacherState { theta: [0.0, 0.0], velocity: [0.0, 0.0], goal });
        let out = env.step(&Action::Continuous(vec![1.0, 0.0])).unwrap();
        assert!((env.state().theta[0] - 0.1).abs() < 1e-12);
        assert!(out.success && out.done && out.reward == 1.0);
        assert_eq!(out.observation.data()[6], 1.0);
    }

    #[test]
    fn out_of_range_command_is_rejected() {
        let mut env = Reacher::new();
        assert!(env.step(&Action::Continuous(vec![1.2, 0.0])).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }

    #[test]
    fn goal_observation_has_tip_on_goal() {
        let mut env = Reacher::new();
        env.reset(&mut ChaCha8Rng::seed_from_u64(2));
        let g = env.goal_observation();
        assert!(g.data()[8].abs() < 1e-7 && g.data()[9].abs() < 1e-7);
    }

    #[test]
    fn hand_reward_values() {
        let goal = forward_kinematics([0.0, 0.0]);
        let at_goal = ReacherState { theta: [0.0, 0.0], velocity: [0.0; 2], goal };
        assert_eq!(hand_reward(&at_goal, &[0.0, 0.0]), 0.0);
        let away = ReacherState { goal: [goal[0] - 0.1, goal[1]], ..at_goal };
        assert!((hand_reward(&away, &[0.0, 0.0]) + 0.1).abs() < 1e-12);
        assert!((hand_reward(&away, &[1.0, 0.0]) + 0.11).abs() < 1e-12);
    }
}
