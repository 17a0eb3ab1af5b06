//! Native control environments and random-exploration data collection.

pub mod grid;
pub mod pendulum;
pub mod reacher;
pub mod render;
pub mod trajectory;

use std::fmt;
use std::str::FromStr;

use diffnet::Tensor;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{Cell, GridLayout, GridState, GridWorld, LayoutTag};
pub use pendulum::{Pendulum, PendulumState};
pub use reacher::{Reacher, ReacherState};
pub use render::{render_grid, render_pendulum, TextureSpec, TextureTag, IMAGE_SIZE};
pub use trajectory::{collect_random_trajectories, Trajectory, TrajectorySet, Transition};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Flat numeric form used for storage and log-densities.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Action::Discrete(a) => vec![*a as f64],
            Action::Continuous(v) => v.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Action::Discrete(_) => 0.0,
            Action::Continuous(v) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Policy head width: action count or continuous dimension.
    pub fn size(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    /// Width of an action when stored as floats.
    pub fn storage_width(&self) -> usize {
        match *self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Action {
        match *self {
            ActionSpace::Discrete(n) => Action::Discrete(rng.gen_range(0..n)),
            ActionSpace::Box { dim, low, high } => Action::Continuous((0..dim).map(|_| rng.gen_range(low..=high)).collect()),
        }
    }

    /// Clamps a continuous action into the box; discrete actions pass through.
    pub fn clip(&self, action: &Action) -> Action {
        match (self, action) {
            (ActionSpace::Box { low, high, .. }, Action::Continuous(v)) => {
                Action::Continuous(v.iter().map(|x| x.clamp(*low, *high)).collect())
            }
            _ => action.clone(),
        }
    }

    pub fn from_stored(&self, values: &[f64]) -> Action {
        match self {
            ActionSpace::Discrete(_) => Action::Discrete(values[0] as usize),
            ActionSpace::Box { .. } => Action::Continuous(values.to_vec()),
        }
    }

    /// Checks range and dimension.
    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Box { dim, low, high }, Action::Continuous(v))
                if v.len() == *dim && v.iter().all(|x| (*low..=*high).contains(x)) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidAction(format!("{action:?} outside {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvId {
    GridWorld(LayoutTag),
    Pendulum,
    Reacher,
}

impl EnvId {
    pub fn name(&self) -> String {
        match self {
            EnvId::GridWorld(tag) => tag.name().to_string(),
            EnvId::Pendulum => "pendulum".into(),
            EnvId::Reacher => "reacher".into(),
        }
    }

    pub fn make(&self) -> Box<dyn Environment> {
        match *self {
            EnvId::GridWorld(tag) => Box::new(GridWorld::new(GridLayout::builtin(tag))),
            EnvId::Pendulum => Box::new(Pendulum::new()),
            EnvId::Reacher => Box::new(Reacher::new()),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvId::Pendulum),
            "reacher" => Ok(EnvId::Reacher),
            other => other
                .parse::<LayoutTag>()
                .map(EnvId::GridWorld)
                .map_err(|_| Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

impl TryFrom<String> for EnvId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvId> for String {
    fn from(id: EnvId) -> String {
        id.name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
    /// Goal condition met on this step.
    pub success: bool,
}

/// Episodic environment with a sparse goal reward.
pub trait Environment: Send {
    fn id(&self) -> EnvId;
    fn observation_shape(&self) -> Vec<usize>;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    fn set_horizon(&mut self, horizon: usize);
    fn reset(&mut self, rng: &mut dyn RngCore) -> Tensor;
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;

    /// Independent copy, used for evaluation episodes.
    fn clone_box(&self) -> Box<dyn Environment>;

    /// Observation of the canonical goal state for the current episode.
    fn goal_observation(&self) -> Tensor;

    /// Goal observation matching the episode `observation` belongs to.
    fn goal_observation_for(&self, _observation: &Tensor) -> Tensor {
        self.goal_observation()
    }

    /// Task-specific dense penalty at the current state, if the env defines one.
    fn hand_reward(&self, _action: &Action) -> Option<f64> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_id_round_trips() {
        for id in [EnvId::Pendulum, EnvId::Reacher, EnvId::GridWorld(LayoutTag::FourRooms)] {
            assert_eq!(id.name().parse::<EnvId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(serde_json::from_str::<EnvId>(&json).unwrap(), id);
        }
        assert!("cheetah".parse::<EnvId>().is_err());
    }

    #[test]
    fn action_space_checks() {
        let b = ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 };
        assert!(b.validate(&Action::Continuous(vec![0.5, -1.0])).is_ok());
        assert!(b.validate(&Action::Continuous(vec![1.5, 0.0])).is_err());
        assert!(b.validate(&Action::Continuous(vec![0.0])).is_err());
        assert_eq!(b.clip(&Action::Continuous(vec![3.0, -3.0])), Action::Continuous(vec![1.0, -1.0]));
        assert!(ActionSpace::Discrete(4).validate(&Action::Discrete(4)).is_err());
    }
}
