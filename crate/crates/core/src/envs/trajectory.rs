//! Episode storage and random-exploration collection.

use std::path::Path;

use diffnet::{Container, Tensor};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvId, Environment};
use crate::error::{Error, Result};

pub const TRAJECTORY_KIND: &str = "trajectories";

/// One episode: `observations` holds every visited state, so it is one
/// longer than the per-step arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Tensor>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub observation: &'a Tensor,
    pub action: &'a Action,
    pub reward: f64,
    pub next_observation: &'a Tensor,
    pub done: bool,
}

impl Trajectory {
    pub fn start(observation: Tensor) -> Self {
        Self { observations: vec![observation], actions: Vec::new(), rewards: Vec::new(), dones: Vec::new() }
    }

    pub fn push(&mut self, action: Action, reward: f64, next_observation: Tensor, done: bool) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.dones.push(done);
        self.observations.push(next_observation);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        (0..self.len()).map(move |i| Transition {
            observation: &self.observations[i],
            action: &self.actions[i],
            reward: self.rewards[i],
            next_observation: &self.observations[i + 1],
            done: self.dones[i],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SetMeta {
    env: EnvId,
    count: usize,
    lengths: Vec<usize>,
    observation_shape: Vec<usize>,
    action_width: usize,
    discrete_actions: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub env: EnvId,
    pub observation_shape: Vec<usize>,
    pub action_space: ActionSpace,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Every stored state, in trajectory order.
    pub fn states(&self) -> impl Iterator<Item = &Tensor> {
        self.trajectories.iter().flat_map(|t| t.observations.iter())
    }

    /// Replaces every observation with `f(obs)`, keeping actions and rewards.
    pub fn map_observations(&self, mut f: impl FnMut(&Tensor) -> Tensor) -> Self {
        let trajectories: Vec<Trajectory> = self
            .trajectories
            .iter()
            .map(|t| Trajectory { observations: t.observations.iter().map(&mut f).collect(), ..t.clone() })
            .collect();
        let observation_shape = trajectories
            .first()
            .map(|t| t.observations[0].shape().to_vec())
            .unwrap_or_else(|| self.observation_shape.clone());
        Self { observation_shape, trajectories, ..self.clone() }
    }

    pub fn to_container(&self) -> Result<Container> {
        let width = self.action_space.storage_width();
        let meta = SetMeta {
            env: self.env,
            count: self.len(),
            lengths: self.trajectories.iter().map(Trajectory::len).collect(),
            observation_shape: self.observation_shape.clone(),
            action_width: width,
            discrete_actions: matches!(self.action_space, ActionSpace::Discrete(_)),
        };
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        for t in &self.trajectories {
            for o in &t.observations {
                obs.extend_from_slice(o.data());
            }
            for a in &t.actions {
                actions.extend(a.to_vec());
            }
            rewards.extend_from_slice(&t.rewards);
            dones.extend(t.dones.iter().map(|&d| if d { 1.0 } else { 0.0 }));
        }
        let states = self.len() + self.total_steps();
        let steps = self.total_steps();
        let mut c = Container::new(TRAJECTORY_KIND, serde_json::to_value(meta)?);
        let mut obs_shape = vec![states];
        obs_shape.extend_from_slice(&self.observation_shape);
        // empty per-step arrays are stored as a single padding element
        let pad = |v: Vec<f64>, shape: Vec<usize>| -> Result<Tensor> {
            if v.is_empty() {
                Ok(Tensor::vector(vec![0.0]))
            } else {
                Ok(Tensor::new(shape, v)?)
            }
        };
        c.push("observations", Tensor::new(obs_shape, obs)?);
        c.push("actions", pad(actions, vec![steps, width])?);
        c.push("rewards", pad(rewards, vec![steps])?);
        c.push("dones", pad(dones, vec![steps])?);
        Ok(c)
    }

    pub fn from_container(c: &Container, action_space: ActionSpace) -> Result<Self> {
        c.expect_kind(TRAJECTORY_KIND)?;
        let meta: SetMeta = serde_json::from_value(c.meta.clone())?;
        if meta.lengths.len() != meta.count || meta.action_width != action_space.storage_width() {
            return Err(Error::Invalid("trajectory header does not match the environment".into()));
        }
        let obs = c.tensor("observations")?.data();
        let actions = c.tensor("actions")?.data();
        let rewards = c.tensor("rewards")?.data();
        let dones = c.tensor("dones")?.data();
        let osize: usize = meta.observation_shape.iter().product();
        let states: usize = meta.lengths.iter().map(|l| l + 1).sum();
        if obs.len() != states * osize {
            return Err(Error::Invalid("observation payload has the wrong length".into()));
        }
        let (mut si, mut ti) = (0, 0);
        let mut trajectories = Vec::with_capacity(meta.count);
        for &len in &meta.lengths {
            let mut observations = Vec::with_capacity(len + 1);
            for _ in 0..=len {
                observations.push(Tensor::new(meta.observation_shape.clone(), obs[si * osize..(si + 1) * osize].to_vec())?);
                si += 1;
            }
            let w = meta.action_width;
            trajectories.push(Trajectory {
                observations,
                actions: (ti..ti + len).map(|i| action_space.from_stored(&actions[i * w..(i + 1) * w])).collect(),
                rewards: rewards[ti..ti + len].to_vec(),
                dones: dones[ti..ti + len].iter().map(|&d| d > 0.5).collect(),
            });
            ti += len;
        }
        Ok(Self { env: meta.env, observation_shape: meta.observation_shape, action_space, trajectories })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_container()?.write(path)?)
    }

    /// Loads a set; the action space comes from the recorded environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read(path)?;
        let meta: SetMeta = serde_json::from_value(c.meta.clone())?;
        let space = meta.env.make().action_space();
        Self::from_container(&c, space)
    }
}

/// Uniform-random exploration: `count` episodes, each reset on done or after
/// `max_len` steps.
pub fn collect_random_trajectories(
    env: &mut dyn Environment,
    count: usize,
    max_len: usize,
    rng: &mut dyn RngCore,
) -> Result<TrajectorySet> {
    if count == 0 || max_len == 0 {
        return Err(Error::Config("trajectory count and length must be at least 1".into()));
    }
    let horizon = env.horizon();
    env.set_horizon(max_len);
    let space = env.action_space();
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let mut traj = Trajectory::start(env.reset(rng));
        for _ in 0..max_len {
            let action = space.sample(rng);
            let out = env.step(&action)?;
            let done = out.done;
            traj.push(action, out.reward, out.observation, done);
            if done {
                break;
            }
        }
        trajectories.push(traj);
    }
    env.set_horizon(horizon);
    Ok(TrajectorySet { env: env.id(), observation_shape: env.observation_shape(), action_space: space, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{GridLayout, GridWorld, LayoutTag, Pendulum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_trajectory() {
        let mut env = Pendulum::new();
        let set = collect_random_trajectories(&mut env, 1, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.trajectories[0].len(), 1);
        assert_eq!(set.trajectories[0].observations.len(), 2);
        assert!(collect_random_trajectories(&mut env, 0, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn collection_overrides_horizon_then_restores() {
        let mut env = Pendulum::new();
        let set = collect_random_trajectories(&mut env, 3, 300, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(set.trajectories.iter().all(|t| t.len() <= 300));
        assert!(set.trajectories.iter().any(|t| t.len() == 300));
        assert_eq!(env.horizon(), 200);
    }

    #[test]
    fn grid_episodes_end_on_goal_or_cap() {
        let mut env = GridWorld::new(GridLayout::builtin(LayoutTag::UMaze));
        let set = collect_random_trajectories(&mut env, 30, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for t in &set.trajectories {
            let last = *t.dones.last().unwrap();
            assert!(t.len() == 100 || (last && t.rewards[t.len() - 1] == 1.0));
            assert!(t.dones[..t.len() - 1].iter().all(|d| !d));
        }
    }
}
