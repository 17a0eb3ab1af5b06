//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpc::{CpcConfig, EncoderKind};
use crate::envs::{EnvId, LayoutTag, TextureTag};
use crate::error::{Error, Result};
use crate::rl::PpoConfig;
use crate::shaping::{SchemeKind, DEFAULT_BONUS};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Gridworld,
    Pendulum,
    Reacher,
}

/// Rendering of stored observations into textured images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureBlock {
    /// Textures cycled over the collected trajectories.
    pub train: Vec<TextureTag>,
    /// Texture kept out of training, used by the texture experiment.
    #[serde(default)]
    pub holdout: Option<TextureTag>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvBlock {
    pub id: EnvKind,
    /// GridWorld layout.
    #[serde(default)]
    pub layout: Option<LayoutTag>,
    #[serde(default)]
    pub texture: Option<TextureBlock>,
}

impl EnvBlock {
    pub fn env_id(&self) -> Result<EnvId> {
        match (self.id, self.layout) {
            (EnvKind::Gridworld, Some(tag)) => Ok(EnvId::GridWorld(tag)),
            (EnvKind::Gridworld, None) => Err(Error::Config("env.layout is required for gridworld".into())),
            (EnvKind::Pendulum, None) => Ok(EnvId::Pendulum),
            (EnvKind::Reacher, None) => Ok(EnvId::Reacher),
            (_, Some(_)) => Err(Error::Config("env.layout only applies to gridworld".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectBlock {
    pub count: usize,
    pub max_len: usize,
}

impl Default for CollectBlock {
    fn default() -> Self {
        Self { count: 200, max_len: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterBlock {
    pub k: usize,
    pub samples: usize,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for ClusterBlock {
    fn default() -> Self {
        Self { k: 4, samples: 5000, restarts: 10, max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeBlock {
    pub kind: SchemeKind,
    /// Distance scale; calibrated from the stored trajectories when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_bonus")]
    pub bonus: f64,
    #[serde(default)]
    pub two_policy: bool,
    /// Label used in file names (defaults to the scheme name).
    #[serde(default)]
    pub label: Option<String>,
    /// Per-arm override of `ppo.feature_mode`.
    #[serde(default)]
    pub feature_mode: Option<crate::rl::FeatureMode>,
}

fn default_bonus() -> f64 {
    DEFAULT_BONUS
}

impl SchemeBlock {
    pub fn of(kind: SchemeKind) -> Self {
        Self { kind, beta: None, bonus: DEFAULT_BONUS, two_policy: false, label: None, feature_mode: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.name().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Shortest-path vs embedding distance (GridWorld).
    DistanceCorrelation,
    /// Success rate of the trained policy.
    Success,
    /// Held-out texture agreement (image encoders).
    Texture,
    /// Train and compare every scheme in `eval.schemes` over all seeds.
    Compare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::DistanceCorrelation => "distance-correlation",
            Experiment::Success => "success",
            Experiment::Texture => "texture",
            Experiment::Compare => "compare",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub experiment: Experiment,
    pub pairs: usize,
    pub episodes: usize,
    /// Arms of the compare experiment.
    pub schemes: Vec<SchemeBlock>,
    /// Pendulum states scored by the texture experiment.
    pub texture_states: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self { experiment: Experiment::Success, pairs: 500, episodes: 100, schemes: Vec::new(), texture_states: 1000 }
    }
}

/// Explicit artifact paths; each defaults to a file under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPaths {
    pub trajectories: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub env: EnvBlock,
    #[serde(default)]
    pub collect: CollectBlock,
    #[serde(default)]
    pub cpc: CpcConfig,
    #[serde(default)]
    pub cluster: ClusterBlock,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeBlock,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub eval: EvalBlock,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub artifacts: ArtifactPaths,
}

fn default_scheme() -> SchemeBlock {
    SchemeBlock::of(SchemeKind::Sparse)
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Every key the config file accepts, for `--help`.
pub const CONFIG_KEYS: &str = "\
version (must be 1)
env.id (gridworld|pendulum|reacher), env.layout (umaze|fourrooms|blockmaze),
env.texture.train [bricks|sand|cloth|wood..], env.texture.holdout, env.texture.seed
collect.count, collect.max_len
cpc.context, cpc.predict, cpc.batch, cpc.epochs, cpc.learning_rate, cpc.embedding,
cpc.context_size, cpc.negatives, cpc.encoder (mlp|conv), cpc.hidden, cpc.activation,
cpc.conv_channels, cpc.segment_stride, cpc.score_init
cluster.k, cluster.samples, cluster.restarts, cluster.max_iters
scheme.kind (sparse|hand-shaped|raw-distance|embedding-distance|cluster-bonus),
scheme.beta, scheme.bonus, scheme.two_policy, scheme.label, scheme.feature_mode
ppo.gamma, ppo.entropy_coef, ppo.learning_rate, ppo.clip_range, ppo.max_grad_norm,
ppo.minibatch, ppo.gae_lambda, ppo.rollout, ppo.epochs, ppo.total_steps,
ppo.feature_mode (raw|embedding), ppo.value_coef, ppo.hidden, ppo.eval_episodes, ppo.scale_rewards
eval.experiment (distance-correlation|success|texture|compare), eval.pairs,
eval.episodes, eval.schemes [scheme blocks], eval.texture_states
seeds, out, artifacts.trajectories, artifacts.encoder, artifacts.clusters, artifacts.policy";

impl ExperimentConfig {
    /// A config with defaults for every block.
    pub fn new(env: EnvBlock) -> Self {
        Self {
            version: CONFIG_VERSION,
            env,
            collect: CollectBlock::default(),
            cpc: CpcConfig::default(),
            cluster: ClusterBlock::default(),
            scheme: default_scheme(),
            ppo: PpoConfig::default(),
            eval: EvalBlock::default(),
            seeds: default_seeds(),
            out: None,
            artifacts: ArtifactPaths::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        let id = self.env.env_id()?;
        if self.collect.count == 0 || self.collect.max_len == 0 {
            return Err(Error::Config("collect.count and collect.max_len must be at least 1".into()));
        }
        self.cpc.validate()?;
        if self.cluster.k == 0 || self.cluster.samples < self.cluster.k {
            return Err(Error::Config("cluster.k must be positive and no larger than cluster.samples".into()));
        }
        self.ppo.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(t) = &self.env.texture {
            if t.train.is_empty() {
                return Err(Error::Config("env.texture.train needs at least one texture".into()));
            }
            if matches!(id, EnvId::Reacher) {
                return Err(Error::Config("reacher has no image rendering".into()));
            }
        }
        if self.env.texture.is_some() != (self.cpc.encoder == EncoderKind::Conv) {
            return Err(Error::Config("cpc.encoder must be conv exactly when env.texture is set".into()));
        }
        Ok(())
    }
}
