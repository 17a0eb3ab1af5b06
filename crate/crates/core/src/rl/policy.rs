//! Actor-critic networks, action distributions and persisted agents.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use diffnet::{log_sum_exp, Container, Graph, Mlp, ParameterSet, Tensor, Var};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::FeatureMode;
use crate::cpc::EncoderModel;
use crate::envs::{Action, ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::shaping::Phase;

pub const POLICY_KIND: &str = "policy";
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_STD: &str = "log_std";
/// Scale applied to the initial actor output weights so the starting policy is near uniform.
const ACTOR_OUT_SCALE: f64 = 0.01;

/// What the policy sees: the raw observation or its CPC embedding.
#[derive(Debug, Clone)]
pub enum Featurizer {
    Raw,
    Embedding(Arc<EncoderModel>),
}

impl Featurizer {
    pub fn mode(&self) -> FeatureMode {
        match self {
            Featurizer::Raw => FeatureMode::Raw,
            Featurizer::Embedding(_) => FeatureMode::Embedding,
        }
    }

    pub fn input_size(&self, env: &dyn Environment) -> usize {
        match self {
            Featurizer::Raw => env.observation_shape().iter().product(),
            Featurizer::Embedding(e) => e.embedding_size(),
        }
    }

    pub fn features(&self, observation: &Tensor) -> Result<Vec<f64>> {
        match self {
            Featurizer::Raw => Ok(observation.data().to_vec()),
            Featurizer::Embedding(e) => Ok(e.encode_state(observation)?.into_data()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    /// Action handed to the environment (clipped into the box).
    pub action: Action,
    /// Sampled action as stored for the update (unclipped).
    pub stored: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Separate actor and critic, each two hidden tanh layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub action_space: ActionSpace,
    pub input_size: usize,
    pub hidden: usize,
    pub params: ParameterSet,
    actor: Mlp,
    critic: Mlp,
}

impl PolicyModel {
    fn nets(input_size: usize, space: &ActionSpace, hidden: usize) -> (Mlp, Mlp) {
        (
            Mlp::new("actor.", &[input_size, hidden, hidden, space.size()]),
            Mlp::new("critic.", &[input_size, hidden, hidden, 1]),
        )
    }

    pub fn new(input_size: usize, action_space: ActionSpace, hidden: usize, rng: &mut impl Rng) -> Self {
        let (actor, critic) = Self::nets(input_size, &action_space, hidden);
        let mut params = ParameterSet::new(json!({"type": "policy", "actor": actor.layout(), "critic": critic.layout()}));
        params.merge_prefixed("", actor.init(rng));
        params.merge_prefixed("", critic.init(rng));
        let out = actor.weight_name(actor.sizes.len() - 2);
        let w = params.get_mut(&out).expect("actor output layer");
        w.data_mut().iter_mut().for_each(|x| *x *= ACTOR_OUT_SCALE);
        if let ActionSpace::Box { dim, .. } = action_space {
            params.insert(LOG_STD, Tensor::zeros(&[dim]));
        }
        Self { action_space, input_size, hidden, params, actor, critic }
    }

    /// Same architecture with every parameter zero: uniform logits, zero mean, unit std.
    pub fn zeroed(input_size: usize, action_space: ActionSpace, hidden: usize) -> Self {
        let mut m = Self::new(input_size, action_space, hidden, &mut ChaCha8Rng::seed_from_u64(0));
        let layout = m.params.layout.clone();
        m.params = m.params.zeros_like();
        m.params.layout = layout;
        m
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_size {
            return Err(Error::Net(diffnet::error::shape_err("policy features", self.input_size, features.len())));
        }
        Ok(())
    }

    /// Actor head (logits or Gaussian mean) and critic value for one feature vector.
    pub fn heads(&self, features: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_features(features)?;
        let x = Tensor::vector(features.to_vec());
        let head = self.actor.apply(&self.params, &x)?.into_data();
        let value = self.critic.apply(&self.params, &x)?.item();
        if !head.iter().all(|v| v.is_finite()) || !value.is_finite() {
            return Err(Error::Diverged(format!("policy produced non-finite outputs: head {head:?}, value {value}")));
        }
        Ok((head, value))
    }

    pub fn value(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        let v = self.critic.apply(&self.params, &Tensor::vector(features.to_vec()))?.item();
        if !v.is_finite() {
            return Err(Error::Diverged(format!("critic produced {v}")));
        }
        Ok(v)
    }

    /// Clamped log standard deviations of a Gaussian head.
    pub fn log_std(&self) -> Option<Vec<f64>> {
        let t = self.params.get(LOG_STD).ok()?;
        Some(t.data().iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect())
    }

    /// Log-density (or log-mass) of a stored action given the actor head.
    fn log_prob_from_head(&self, head: &[f64], stored: &[f64]) -> f64 {
        match self.action_space {
            ActionSpace::Discrete(_) => {
                let a = stored[0] as usize;
                head[a] - log_sum_exp(head)
            }
            ActionSpace::Box { dim, .. } => {
                let ls = self.log_std().expect("gaussian head");
                let mut lp = -0.5 * dim as f64 * (2.0 * PI).ln();
                for j in 0..dim {
                    let z = (stored[j] - head[j]) / ls[j].exp();
                    lp -= 0.5 * z * z + ls[j];
                }
                lp
            }
        }
    }

    pub fn log_prob(&self, features: &[f64], stored: &[f64]) -> Result<f64> {
        let (head, _) = self.heads(features)?;
        Ok(self.log_prob_from_head(&head, stored))
    }

    /// Samples an action (or takes the argmax / mean when `deterministic`).
    pub fn step(&self, features: &[f64], rng: &mut dyn RngCore, deterministic: bool) -> Result<PolicyStep> {
        let (head, value) = self.heads(features)?;
        let stored = match self.action_space {
            ActionSpace::Discrete(n) => {
                let a = if deterministic {
                    (0..n).fold(0, |best, i| if head[i] > head[best] { i } else { best })
                } else {
                    let lse = log_sum_exp(&head);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for (i, h) in head.iter().enumerate() {
                        acc += (h - lse).exp();
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                };
                vec![a as f64]
            }
            ActionSpace::Box { .. } => {
                if deterministic {
                    head.clone()
                } else {
                    let ls = self.log_std().expect("gaussian head");
                    head.iter().zip(&ls).map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal)).collect()
                }
            }
        };
        let log_prob = self.log_prob_from_head(&head, &stored);
        let action = self.action_space.clip(&self.action_space.from_stored(&stored));
        Ok(PolicyStep { action, stored, log_prob, value })
    }

    /// Records log-probabilities `[N, 1]`, mean entropy (scalar) and values `[N, 1]`
    /// for a feature batch `x: [N, input]`.
    pub fn record<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a ParameterSet,
        x: Var,
        actions: &[Vec<f64>],
    ) -> Result<(Var, Var, Var)> {
        let head = self.actor.forward(g, params, x)?;
        let values = self.critic.forward(g, params, x)?;
        let n = actions.len();
        match self.action_space {
            ActionSpace::Discrete(_) => {
                let lsm = g.log_softmax(head);
                let idx = actions.iter().map(|a| a[0] as usize).collect();
                let logp = g.pick(lsm, idx)?;
                let p = g.exp(lsm);
                let plogp = g.mul(p, lsm)?;
                let s = g.sum(plogp);
                let entropy = g.scale(s, -1.0 / n as f64);
                Ok((logp, entropy, values))
            }
            ActionSpace::Box { dim, .. } => {
                let raw = g.param_from(params, LOG_STD)?;
                let ls = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                let flat: Vec<f64> = actions.iter().flatten().copied().collect();
                let a = g.input(Tensor::new(vec![n, dim], flat)?);
                let diff = g.sub(a, head)?;
                let neg_ls = g.neg(ls);
                let inv_std = g.exp(neg_ls);
                let z = g.mul_row(diff, inv_std)?;
                let z2 = g.square(z);
                let quad = g.sum_cols(z2)?;
                let quad = g.scale(quad, -0.5);
                let ls_sum = g.sum(ls);
                let ls_sum = g.reshape(ls_sum, &[1])?;
                let neg_ls_sum = g.neg(ls_sum);
                let logp = g.add_row(quad, neg_ls_sum)?;
                let logp = g.add_scalar(logp, -0.5 * dim as f64 * (2.0 * PI).ln());
                let entropy = g.sum(ls);
                let entropy = g.add_scalar(entropy, 0.5 * dim as f64 * (1.0 + (2.0 * PI).ln()));
                Ok((logp, entropy, values))
            }
        }
    }

    fn from_params(input_size: usize, action_space: ActionSpace, hidden: usize, params: ParameterSet) -> Result<Self> {
        let mut m = Self::zeroed(input_size, action_space, hidden);
        for (name, t) in m.params.iter_mut() {
            let src = params.get(name)?;
            if src.shape() != t.shape() {
                return Err(Error::Net(diffnet::error::shape_err(name, t.shape(), src.shape())));
            }
            *t = src.clone();
        }
        Ok(m)
    }
}

/// One policy, or a seek/goal pair for the two-step cluster-bonus mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    /// Goal policy (the only policy in single-policy mode).
    pub main: PolicyModel,
    /// Drives the agent into the goal cluster in two-policy mode.
    pub seek: Option<PolicyModel>,
    pub feature_mode: FeatureMode,
}

impl Agent {
    pub fn policy(&self, phase: Phase) -> &PolicyModel {
        match (&self.seek, phase) {
            (Some(seek), Phase::Seek) => seek,
            _ => &self.main,
        }
    }

    pub fn to_container(&self) -> Container {
        let mut all = ParameterSet::new(Value::Null);
        all.merge_prefixed("main.", self.main.params.clone());
        if let Some(seek) = &self.seek {
            all.merge_prefixed("seek.", seek.params.clone());
        }
        let meta = json!({
            "action_space": self.main.action_space,
            "input_size": self.main.input_size,
            "hidden": self.main.hidden,
            "feature_mode": self.feature_mode,
            "two_policy": self.seek.is_some(),
        });
        all.to_container(POLICY_KIND, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (all, meta) = ParameterSet::load(path, POLICY_KIND)?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Invalid(format!("policy metadata lacks `{k}`")));
        let space: ActionSpace = serde_json::from_value(field("action_space")?)?;
        let input: usize = serde_json::from_value(field("input_size")?)?;
        let hidden: usize = serde_json::from_value(field("hidden")?)?;
        let feature_mode: FeatureMode = serde_json::from_value(field("feature_mode")?)?;
        let two: bool = serde_json::from_value(field("two_policy")?)?;
        let part = |prefix: &str| {
            let mut p = ParameterSet::new(Value::Null);
            for (name, t) in all.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    p.insert(rest, t.clone());
                }
            }
            PolicyModel::from_params(input, space.clone(), hidden, p)
        };
        let main = part("main.")?;
        let seek = if two { Some(part("seek.")?) } else { None };
        Ok(Self { main, seek, feature_mode })
    }
}
