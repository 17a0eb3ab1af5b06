//! Reward schemes layered over an environment's sparse goal reward.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use diffnet::Tensor;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::cpc::EncoderModel;
use crate::envs::pendulum::{self, PendulumState};
use crate::envs::reacher::{self, ReacherState};
use crate::envs::{Action, Environment, StepOutcome};
use crate::error::{Error, Result};

pub const DEFAULT_BONUS: f64 = 0.5;
/// Target mean per-step distance penalty used when calibrating β.
pub const CALIBRATED_PENALTY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Sparse,
    HandShaped,
    RawDistance,
    EmbeddingDistance,
    ClusterBonus,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Sparse,
        SchemeKind::HandShaped,
        SchemeKind::RawDistance,
        SchemeKind::EmbeddingDistance,
        SchemeKind::ClusterBonus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Sparse => "sparse",
            SchemeKind::HandShaped => "hand-shaped",
            SchemeKind::RawDistance => "raw-distance",
            SchemeKind::EmbeddingDistance => "embedding-distance",
            SchemeKind::ClusterBonus => "cluster-bonus",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward scheme `{s}`")))
    }
}

/// A reward scheme with the models it needs.
#[derive(Debug, Clone)]
pub enum RewardScheme {
    Sparse,
    HandShaped,
    RawDistance { beta: f64 },
    EmbeddingDistance { beta: f64, encoder: Arc<EncoderModel> },
    ClusterBonus { bonus: f64, encoder: Arc<EncoderModel>, clusters: Arc<ClusterModel>, two_policy: bool },
}

impl RewardScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            RewardScheme::Sparse => SchemeKind::Sparse,
            RewardScheme::HandShaped => SchemeKind::HandShaped,
            RewardScheme::RawDistance { .. } => SchemeKind::RawDistance,
            RewardScheme::EmbeddingDistance { .. } => SchemeKind::EmbeddingDistance,
            RewardScheme::ClusterBonus { .. } => SchemeKind::ClusterBonus,
        }
    }

    pub fn cluster_bonus(encoder: Arc<EncoderModel>, clusters: Arc<ClusterModel>, bonus: f64, two_policy: bool) -> Result<Self> {
        clusters.goal_cluster()?;
        Ok(RewardScheme::ClusterBonus { bonus, encoder, clusters, two_policy })
    }

    pub fn two_policy(&self) -> bool {
        matches!(self, RewardScheme::ClusterBonus { two_policy: true, .. })
    }

    pub fn check_compatible(&self, env: &dyn Environment) -> Result<()> {
        let shape = env.observation_shape();
        match self {
            RewardScheme::HandShaped => {
                let probe = env.action_space().sample(&mut rand::rngs::mock::StepRng::new(0, 0));
                if env.hand_reward(&probe).is_none() {
                    return Err(Error::Config(format!("{} has no hand-shaped reward", env.id())));
                }
            }
            RewardScheme::EmbeddingDistance { encoder, .. } | RewardScheme::ClusterBonus { encoder, .. } => {
                if encoder.observation_shape != shape {
                    return Err(Error::Config(format!(
                        "encoder expects observations {:?}, {} produces {:?}",
                        encoder.observation_shape,
                        env.id(),
                        shape
                    )));
                }
            }
            _ => {}
        }
        if let RewardScheme::ClusterBonus { clusters, encoder, .. } = self {
            clusters.goal_cluster()?;
            if clusters.dim() != encoder.embedding_size() {
                return Err(Error::Config("cluster centroids do not match the encoder's embedding size".into()));
            }
        }
        Ok(())
    }
}

pub fn shape_sparse(outcome: &StepOutcome) -> f64 {
    if outcome.success {
        1.0
    } else {
        0.0
    }
}

pub fn shape_hand_pendulum(state: &PendulumState, torque: f64) -> f64 {
    pendulum::hand_reward(state, torque)
}

pub fn shape_hand_reacher(state: &ReacherState, action: &[f64]) -> f64 {
    reacher::hand_reward(state, action)
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `−β‖s − g‖²` in observation space.
pub fn shape_raw_distance(observation: &Tensor, goal: &Tensor, beta: f64) -> Result<f64> {
    if observation.shape() != goal.shape() {
        return Err(Error::Invalid(format!("observation {:?} vs goal {:?}", observation.shape(), goal.shape())));
    }
    Ok(-beta * sq_diff(observation.data(), goal.data()))
}

/// `−β‖z(s) − z(g)‖²` in embedding space.
pub fn shape_embedding_distance(encoder: &EncoderModel, observation: &Tensor, goal: &Tensor, beta: f64) -> Result<f64> {
    let z = encoder.encode_state(observation)?;
    let zg = encoder.encode_state(goal)?;
    Ok(-beta * sq_diff(z.data(), zg.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Heading for the goal cluster; the bonus is still available.
    Seek,
    /// Goal cluster reached; only the environment reward remains.
    Goal,
}

/// One-time bonus on entering the goal cluster.
pub fn shape_cluster_bonus(
    clusters: &ClusterModel,
    encoder: &EncoderModel,
    observation: &Tensor,
    phase: Phase,
    bonus: f64,
) -> Result<(f64, Phase)> {
    let goal = clusters.goal_cluster()?;
    if phase == Phase::Goal {
        return Ok((0.0, Phase::Goal));
    }
    let z = encoder.encode_state(observation)?;
    if clusters.assign(z.data())? == goal {
        Ok((bonus, Phase::Goal))
    } else {
        Ok((0.0, Phase::Seek))
    }
}

/// β giving a mean penalty of [`CALIBRATED_PENALTY`] over the sampled squared distances.
pub fn calibrate_beta(squared_distances: &[f64]) -> Result<f64> {
    let n = squared_distances.len();
    let mean = squared_distances.iter().sum::<f64>() / n.max(1) as f64;
    if n == 0 || !(mean > 1e-12) {
        return Err(Error::Invalid("cannot calibrate a distance scale from degenerate samples".into()));
    }
    Ok(CALIBRATED_PENALTY / mean)
}

/// Variance of embeddings summed over dimensions; near zero means the encoder is degenerate.
pub fn embedding_variance(embeddings: &[Vec<f64>]) -> f64 {
    if embeddings.len() < 2 {
        return 0.0;
    }
    let n = embeddings.len() as f64;
    let d = embeddings[0].len();
    (0..d)
        .map(|j| {
            let m = embeddings.iter().map(|e| e[j]).sum::<f64>() / n;
            embeddings.iter().map(|e| (e[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedTransition {
    pub reward: f64,
    /// Reward of the unshaped environment.
    pub env_reward: f64,
    /// Phase in effect when the action was taken.
    pub phase: Phase,
    /// Goal cluster entered on this step.
    pub entered_goal_cluster: bool,
}

/// Per-episode shaping state for one scheme.
#[derive(Debug, Clone)]
pub struct Shaper {
    scheme: RewardScheme,
    phase: Phase,
    goal_observation: Option<Tensor>,
    goal_embedding: Option<Tensor>,
}

impl Shaper {
    pub fn new(scheme: RewardScheme) -> Self {
        Self { scheme, phase: Phase::Seek, goal_observation: None, goal_embedding: None }
    }

    pub fn scheme(&self) -> &RewardScheme {
        &self.scheme
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Caches the goal and sets the starting phase for a freshly reset env.
    pub fn begin_episode(&mut self, env: &dyn Environment, first_observation: &Tensor) -> Result<()> {
        self.phase = Phase::Seek;
        let goal = env.goal_observation();
        match &self.scheme {
            RewardScheme::EmbeddingDistance { encoder, .. } => {
                self.goal_embedding = Some(encoder.encode_state(&goal)?);
            }
            RewardScheme::ClusterBonus { encoder, clusters, .. } => {
                let z = encoder.encode_state(first_observation)?;
                if clusters.assign(z.data())? == clusters.goal_cluster()? {
                    self.phase = Phase::Goal;
                }
            }
            _ => {}
        }
        self.goal_observation = Some(goal);
        Ok(())
    }

    /// Shaped reward for a step; `hand` is the env's hand reward evaluated
    /// before the step.
    pub fn shape(&mut self, hand: Option<f64>, outcome: &StepOutcome) -> Result<ShapedTransition> {
        let env_reward = outcome.reward;
        let phase = self.phase;
        let goal = || self.goal_observation.as_ref().ok_or_else(|| Error::Invalid("begin_episode was not called".into()));
        let (reward, entered) = match &self.scheme {
            RewardScheme::Sparse => (env_reward, false),
            RewardScheme::HandShaped => {
                let h = hand.ok_or_else(|| Error::Invalid("hand-shaped scheme needs a hand reward".into()))?;
                (env_reward + h, false)
            }
            RewardScheme::RawDistance { beta } => (env_reward + shape_raw_distance(&outcome.observation, goal()?, *beta)?, false),
            RewardScheme::EmbeddingDistance { beta, encoder } => {
                let zg = self.goal_embedding.as_ref().ok_or_else(|| Error::Invalid("begin_episode was not called".into()))?;
                let z = encoder.encode_state(&outcome.observation)?;
                (env_reward - beta * sq_diff(z.data(), zg.data()), false)
            }
            RewardScheme::ClusterBonus { bonus, encoder, clusters, .. } => {
                let (b, next) = shape_cluster_bonus(clusters, encoder, &outcome.observation, self.phase, *bonus)?;
                self.phase = next;
                (env_reward + b, b > 0.0)
            }
        };
        Ok(ShapedTransition { reward, env_reward, phase, entered_goal_cluster: entered })
    }
}

/// Steps `env` once under `shaper`; the hand term is read before stepping.
pub fn shaped_step(env: &mut dyn Environment, shaper: &mut Shaper, action: &Action) -> Result<(StepOutcome, ShapedTransition)> {
    let hand = env.hand_reward(action);
    let out = env.step(action)?;
    let shaped = shaper.shape(hand, &out)?;
    Ok((out, shaped))
}

/// Warns when an encoder maps sample observations to (almost) one point.
pub fn warn_if_degenerate(encoder: &EncoderModel, samples: &[&Tensor]) -> Result<bool> {
    let z = crate::clustering::embed_all(encoder, samples)?;
    let degenerate = embedding_variance(&z) < 1e-6;
    if degenerate {
        warn!("encoder embeddings have variance below 1e-6; distance shaping will be flat");
    }
    Ok(degenerate)
}
