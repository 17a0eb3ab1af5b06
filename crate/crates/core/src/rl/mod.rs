//! Clipped-surrogate policy gradient (PPO) with generalized advantage estimation.

pub mod buffer;
pub mod policy;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use buffer::{compute_gae, normalize_advantages, RewardScaler, RolloutBuffer};
pub use policy::{Agent, Featurizer, PolicyModel, PolicyStep, POLICY_KIND};
pub use ppo::{ppo_loss_graph, ppo_update, PpoLearner, UpdateStats};
pub use train::{evaluate_success, train_policy, CurvePoint, LearningCurve, TrainedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Policy reads the environment observation.
    Raw,
    /// Policy reads the CPC embedding of the observation.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub minibatch: usize,
    pub gae_lambda: f64,
    /// Env steps per rollout.
    pub rollout: usize,
    pub epochs: usize,
    pub total_steps: usize,
    pub feature_mode: FeatureMode,
    pub value_coef: f64,
    pub hidden: usize,
    /// Deterministic episodes per learning-curve point.
    pub eval_episodes: usize,
    /// Divide training rewards by a running std of the discounted return.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            entropy_coef: 0.01,
            learning_rate: 2.5e-4,
            clip_range: 0.2,
            max_grad_norm: 0.5,
            minibatch: 128,
            gae_lambda: 0.95,
            rollout: 2048,
            epochs: 4,
            total_steps: 300_000,
            feature_mode: FeatureMode::Raw,
            value_coef: 0.5,
            hidden: 64,
            eval_episodes: 20,
            scale_rewards: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_range > 0.0) {
            return bad("clip range must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning rate and gradient norm bound must be positive");
        }
        if self.minibatch == 0 || self.rollout == 0 || self.epochs == 0 || self.hidden == 0 {
            return bad("minibatch, rollout, epochs and hidden must be positive");
        }
        if self.total_steps < self.rollout {
            return bad("total_steps must cover at least one rollout");
        }
        Ok(())
    }

    /// Number of rollout/update iterations.
    pub fn iterations(&self) -> usize {
        self.total_steps / self.rollout
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PpoConfig::default();
        c.validate().unwrap();
        assert_eq!((c.gamma, c.entropy_coef, c.learning_rate, c.max_grad_norm, c.minibatch), (0.99, 0.01, 2.5e-4, 0.5, 128));
        assert!(PpoConfig { clip_range: 0.0, ..c.clone() }.validate().is_err());
        assert!(PpoConfig { gamma: 1.5, ..c }.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PpoConfig>(r#"{"gama": 0.9}"#).is_err());
        let c: PpoConfig = serde_json::from_str(r#"{"feature_mode": "embedding"}"#).unwrap();
        assert_eq!(c.feature_mode, FeatureMode::Embedding);
    }
}
