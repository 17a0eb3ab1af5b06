//! Torque-limited pendulum swing-up with a hold-at-top goal.

use std::f64::consts::PI;

use diffnet::Tensor;
use rand::{Rng, RngCore};

use super::{Action, ActionSpace, EnvId, Environment, StepOutcome};
use crate::error::Result;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;
pub const PENDULUM_HORIZON: usize = 200;
/// Goal band is |θ| ≤ this.
pub const GOAL_ANGLE: f64 = 0.1;
/// Steps the arm must stay inside the band.
pub const HOLD_STEPS: usize = 5;

pub const HAND_ALPHA: f64 = 0.1;
pub const HAND_BETA: f64 = 0.001;

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// `sin` that is exactly zero at the two equilibria.
fn sin_eq(theta: f64) -> f64 {
    if theta == 0.0 || theta.abs() == PI {
        0.0
    } else {
        theta.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    /// 0 is upright.
    pub theta: f64,
    pub omega: f64,
}

impl PendulumState {
    pub fn observation(&self) -> Tensor {
        Tensor::vector(vec![self.theta.cos(), self.theta.sin(), self.omega])
    }

    /// Recovers the state from a `(cos θ, sin θ, ω)` observation.
    pub fn from_observation(obs: &Tensor) -> Self {
        let d = obs.data();
        Self { theta: d[1].atan2(d[0]), omega: d[2] }
    }

    /// One semi-implicit Euler step under torque `u`.
    pub fn advance(&self, u: f64) -> Self {
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * sin_eq(self.theta) + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let omega = (self.omega + DT * accel).clamp(-MAX_SPEED, MAX_SPEED);
        Self { theta: wrap_angle(self.theta + DT * omega), omega }
    }

    pub fn in_goal_band(&self) -> bool {
        self.theta.abs() <= GOAL_ANGLE
    }
}

/// Angle, speed and effort penalty; zero only upright, at rest, with no torque.
pub fn hand_reward(state: &PendulumState, torque: f64) -> f64 {
    -(state.theta * state.theta + HAND_ALPHA * state.omega.abs() + HAND_BETA * torque.abs())
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    state: PendulumState,
    hold: usize,
    horizon: usize,
    t: usize,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Pendulum {
    pub fn new() -> Self {
        Self { state: PendulumState { theta: PI, omega: 0.0 }, hold: 0, horizon: PENDULUM_HORIZON, t: 0 }
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) -> Tensor {
        self.state = PendulumState { theta: wrap_angle(state.theta), omega: state.omega.clamp(-MAX_SPEED, MAX_SPEED) };
        self.hold = 0;
        self.t = 0;
        self.state.observation()
    }

    fn torque(action: &Action) -> f64 {
        match action {
            Action::Continuous(v) => v[0],
            Action::Discrete(_) => unreachable!("validated"),
        }
    }
}

impl Environment for Pendulum {
    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }

    fn id(&self) -> EnvId {
        EnvId::Pendulum
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![3]
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { dim: 1, low: -MAX_TORQUE, high: MAX_TORQUE }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon.max(1);
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor {
        // (−π, π]: sample [−π, π) and flip the closed end.
        let theta = -rng.gen_range(-PI..PI);
        let omega = rng.gen_range(-1.0..=1.0);
        self.set_state(PendulumState { theta, omega })
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.action_space().validate(action)?;
        self.state = self.state.advance(Self::torque(action));
        self.t += 1;
        self.hold = if self.state.in_goal_band() { self.hold + 1 } else { 0 };
        let success = self.hold >= HOLD_STEPS;
        Ok(StepOutcome {
            observation: self.state.observation(),
            reward: if success { 1.0 } else { 0.0 },
            done: success || self.t >= self.horizon,
            success,
        })
    }

    fn goal_observation(&self) -> Tensor {
        PendulumState { theta: 0.0, omega: 0.0 }.observation()
    }

    fn hand_reward(&self, action: &Action) -> Option<f64> {
        Some(hand_reward(&self.state, Self::torque(action)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn act(u: f64) -> Action {
        Action::Continuous(vec![u])
    }

    #[test]
    fn hanging_rest_is_fixed_point() {
        let mut env = Pendulum::new();
        env.set_state(PendulumState { theta: PI, omega: 0.0 });
        for _ in 0..50 {
            env.step(&act(0.0)).unwrap();
        }
        assert_eq!(env.state(), PendulumState { theta: PI, omega: 0.0 });
    }

    #[test]
    fn upright_rest_is_fixed_point() {
        let s = PendulumState { theta: 0.0, omega: 0.0 };
        assert_eq!(s.advance(0.0), s);
    }

    #[test]
    fn quarter_turn_euler_step() {
        let s = PendulumState { theta: PI / 2.0, omega: 0.0 }.advance(0.0);
        // ω = dt·(3g/2ℓ)·1, θ = π/2 + dt·ω
        let omega = 0.05 * 15.0;
        assert!((s.omega - omega).abs() < 1e-12);
        assert!((s.theta - (PI / 2.0 + 0.05 * omega)).abs() < 1e-12);
        assert!((s.theta - 1.6083).abs() < 1e-4);
    }

    #[test]
    fn reset_ranges() {
        let mut env = Pendulum::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let obs = env.reset(&mut rng);
            assert!(obs.data()[2].abs() <= 1.0);
            let th = env.state().theta;
            assert!(th > -PI && th <= PI);
        }
    }

    #[test]
    fn torque_out_of_range_is_rejected() {
        let mut env = Pendulum::new();
        assert!(env.step(&act(2.5)).is_err());
        assert!(env.step(&act(-2.0)).is_ok());
        assert!(env.step(&Action::Discrete(0)).is_err());
    }

    #[test]
    fn speed_is_clamped() {
        let mut s = PendulumState { theta: 0.5, omega: 7.9 };
        for _ in 0..100 {
            s = s.advance(2.0);
            assert!(s.omega.abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn goal_needs_five_steps_in_band() {
        let mut env = Pendulum::new();
        env.set_state(PendulumState { theta: 0.0, omega: 0.0 });
        for i in 1..=HOLD_STEPS {
            let out = env.step(&act(0.0)).unwrap();
            assert_eq!(out.success, i == HOLD_STEPS);
            assert_eq!(out.reward, if i == HOLD_STEPS { 1.0 } else { 0.0 });
            assert_eq!(out.done, i == HOLD_STEPS);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn observation_round_trip() {
        let s = PendulumState { theta: -2.0, omega: 0.3 };
        let back = PendulumState::from_observation(&s.observation());
        assert!((back.theta - s.theta).abs() < 1e-12 && back.omega == s.omega);
    }
}
