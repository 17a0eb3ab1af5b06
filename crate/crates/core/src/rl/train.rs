//! Rollout collection, updates and learning curves.

use std::path::Path;

use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{RewardScaler, RolloutBuffer};
use super::policy::{Agent, Featurizer, PolicyModel};
use super::ppo::{PpoLearner, UpdateStats};
use super::PpoConfig;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::shaping::{shaped_step, Phase, RewardScheme, Shaper};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_steps: usize,
    /// Mean unshaped return of the episodes finished during the rollout.
    pub mean_env_return: f64,
    /// Deterministic evaluation success after the update.
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn final_success(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.success_rate)
    }

    /// First env-step count at which evaluation success reached `level`.
    pub fn steps_to_success(&self, level: f64) -> Option<usize> {
        self.points.iter().find(|p| p.success_rate >= level).map(|p| p.env_steps)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(p).map_err(|e| Error::Invalid(format!("curve csv: {e}")))?;
        }
        w.into_inner().map_err(|e| Error::Invalid(format!("curve csv: {e}")))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("curve csv: {e}")))?;
        let points = r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::Invalid(format!("curve csv: {e}")))?;
        Ok(Self { points })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub agent: Agent,
    pub curve: LearningCurve,
}

/// Fraction of deterministic episodes that meet the goal condition within the horizon.
///
/// In two-policy mode the goal-cluster phase of `scheme` decides which policy acts.
pub fn evaluate_success(
    env: &mut dyn Environment,
    agent: &Agent,
    featurizer: &Featurizer,
    scheme: &RewardScheme,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let tracker = if agent.seek.is_some() { scheme.clone() } else { RewardScheme::Sparse };
    let mut shaper = Shaper::new(tracker);
    let mut successes = 0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        shaper.begin_episode(env, &obs)?;
        loop {
            let policy = agent.policy(shaper.phase());
            let step = policy.step(&featurizer.features(&obs)?, rng, true)?;
            let (out, _) = shaped_step(env, &mut shaper, &step.action)?;
            if out.success {
                successes += 1;
                break;
            }
            if out.done {
                break;
            }
            obs = out.observation;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// Alternates fixed-length rollouts with PPO updates until `total_steps`.
pub fn train_policy(
    env: &mut dyn Environment,
    scheme: RewardScheme,
    featurizer: &Featurizer,
    config: &PpoConfig,
    rng: &mut dyn RngCore,
) -> Result<TrainedPolicy> {
    config.validate()?;
    scheme.check_compatible(env)?;
    if let Featurizer::Embedding(e) = featurizer {
        if e.observation_shape != env.observation_shape() {
            return Err(Error::Config("feature encoder does not match the environment's observations".into()));
        }
    }
    if featurizer.mode() != config.feature_mode {
        return Err(Error::Config(format!("featurizer is {:?} but the config asks for {:?}", featurizer.mode(), config.feature_mode)));
    }
    let input = featurizer.input_size(env);
    let space = env.action_space();
    let two = scheme.two_policy();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut main = PpoLearner::new(PolicyModel::new(input, space.clone(), config.hidden, &mut init_rng), config);
    let mut seek = two.then(|| PpoLearner::new(PolicyModel::new(input, space.clone(), config.hidden, &mut init_rng), config));
    let mut eval_env = env.clone_box();

    let mut shaper = Shaper::new(scheme.clone());
    let mut obs = env.reset(rng);
    shaper.begin_episode(env, &obs)?;
    let mut feats = featurizer.features(&obs)?;
    let mut episode_return = 0.0;
    let mut last_mean_return = 0.0;
    let mut curve = LearningCurve::default();
    let mut scaler = config.scale_rewards.then(|| RewardScaler::new(config.gamma));

    for it in 0..config.iterations() {
        let mut main_buf = RolloutBuffer::new(input);
        let mut seek_buf = RolloutBuffer::new(input);
        let mut returns = Vec::new();
        let mut successes = 0;
        for _ in 0..config.rollout {
            let seeking = two && shaper.phase() == Phase::Seek;
            let learner = if seeking { seek.as_ref().expect("two-policy") } else { &main };
            let step = learner.model.step(&feats, rng, false)?;
            let (out, shaped) = shaped_step(env, &mut shaper, &step.action)?;
            episode_return += out.reward;
            let segment_end = out.done || (seeking && shaped.entered_goal_cluster);
            let buf = if seeking { &mut seek_buf } else { &mut main_buf };
            let mut reward = match scaler.as_mut() {
                Some(s) => s.scale(shaped.reward, out.done),
                None => shaped.reward,
            };
            // A horizon cut is not a real terminal state: fold the bootstrap into the reward.
            if out.done && !out.success {
                reward += config.gamma * learner.model.value(&featurizer.features(&out.observation)?)?;
            }
            buf.push(&feats, step.stored, step.log_prob, step.value, reward, segment_end);
            if out.done {
                returns.push(episode_return);
                successes += usize::from(out.success);
                episode_return = 0.0;
                obs = env.reset(rng);
                shaper.begin_episode(env, &obs)?;
            } else {
                obs = out.observation;
            }
            feats = featurizer.features(&obs)?;
        }
        // Only the policy acting now can have an open segment.
        let seeking = two && shaper.phase() == Phase::Seek;
        if seeking {
            let boot = seek.as_ref().expect("two-policy").model.value(&feats)?;
            seek_buf.finish(boot, config.gamma, config.gae_lambda);
            main_buf.close_last();
            main_buf.finish(0.0, config.gamma, config.gae_lambda);
        } else {
            let boot = main.model.value(&feats)?;
            main_buf.finish(boot, config.gamma, config.gae_lambda);
            seek_buf.close_last();
            seek_buf.finish(0.0, config.gamma, config.gae_lambda);
        }

        let stats: UpdateStats = main.update(&main_buf, config, rng)?;
        if let Some(s) = seek.as_mut() {
            s.update(&seek_buf, config, rng)?;
        }

        let agent = Agent {
            main: main.model.clone(),
            seek: seek.as_ref().map(|s| s.model.clone()),
            feature_mode: featurizer.mode(),
        };
        let success_rate = evaluate_success(eval_env.as_mut(), &agent, featurizer, &scheme, config.eval_episodes, &mut eval_rng)?;
        if !returns.is_empty() {
            last_mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        }
        let point = CurvePoint {
            env_steps: (it + 1) * config.rollout,
            mean_env_return: last_mean_return,
            success_rate,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        };
        info!(
            "{} {} iter {}/{}: steps {} return {:.3} ({} episodes, {} reached goal) eval success {:.2} entropy {:.3}",
            env.id(),
            scheme.kind(),
            it + 1,
            config.iterations(),
            point.env_steps,
            point.mean_env_return,
            returns.len(),
            successes,
            success_rate,
            stats.entropy
        );
        curve.points.push(point);
    }

    let agent = Agent { main: main.model, seek: seek.map(|s| s.model), feature_mode: featurizer.mode() };
    Ok(TrainedPolicy { agent, curve })
}
