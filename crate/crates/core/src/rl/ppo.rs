//! Clipped-surrogate update.

use diffnet::{Adam, AdamConfig, Graph, ParameterSet, Tensor, Var};
use log::debug;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::Serialize;

use super::buffer::{normalize_advantages, RolloutBuffer};
use super::policy::PolicyModel;
use super::PpoConfig;
use crate::error::{Error, Result};

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Largest `|ρ − 1|` in the very first minibatch, before any step.
    pub first_ratio_deviation: f64,
    pub minibatches: usize,
}

/// Nodes of the PPO objective for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct PpoLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    /// Probability ratios `[N, 1]`.
    pub ratio: Var,
}

/// `−min(ρA, clip(ρ)A) + c_v·MSE(V, R) − c_e·H` over a minibatch; `advantages` are used as given.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss_graph<'a>(
    g: &mut Graph<'a>,
    params: &'a ParameterSet,
    model: &PolicyModel,
    features: Tensor,
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
) -> Result<PpoLoss> {
    let n = actions.len();
    let x = g.input(features);
    let (logp, entropy, values) = model.record(g, params, x, actions)?;
    let old = g.input(Tensor::new(vec![n, 1], old_log_probs.to_vec())?);
    let adv = g.input(Tensor::new(vec![n, 1], advantages.to_vec())?);
    let ret = g.input(Tensor::new(vec![n, 1], returns.to_vec())?);
    let log_ratio = g.sub(logp, old)?;
    let ratio = g.exp(log_ratio);
    let surr1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range);
    let surr2 = g.mul(clipped, adv)?;
    let surr = g.min(surr1, surr2)?;
    let surr = g.mean(surr);
    let policy = g.neg(surr);
    let err = g.sub(values, ret)?;
    let err2 = g.square(err);
    let value = g.mean(err2);
    let vterm = g.scale(value, config.value_coef);
    let eterm = g.scale(entropy, -config.entropy_coef);
    let total = g.add(policy, vterm)?;
    let total = g.add(total, eterm)?;
    Ok(PpoLoss { total, policy, value, entropy, ratio })
}

/// A policy with its optimizer state.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub model: PolicyModel,
    optimizer: Adam,
}

impl PpoLearner {
    pub fn new(model: PolicyModel, config: &PpoConfig) -> Self {
        let optimizer = Adam::new(AdamConfig::with_lr(config.learning_rate), &model.params);
        Self { model, optimizer }
    }

    pub fn update(&mut self, buffer: &RolloutBuffer, config: &PpoConfig, rng: &mut dyn RngCore) -> Result<UpdateStats> {
        ppo_update(self, buffer, config, rng)
    }
}

/// Runs `epochs` passes of shuffled minibatches over `buffer`.
pub fn ppo_update(learner: &mut PpoLearner, buffer: &RolloutBuffer, config: &PpoConfig, rng: &mut dyn RngCore) -> Result<UpdateStats> {
    let n = buffer.len();
    let mut stats = UpdateStats::default();
    if n == 0 {
        return Ok(stats);
    }
    if buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::Invalid("advantages must be computed before the update".into()));
    }
    let width = buffer.feature_size;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let mut feats = Vec::with_capacity(chunk.len() * width);
            for &i in chunk {
                feats.extend_from_slice(buffer.feature_row(i));
            }
            let actions: Vec<Vec<f64>> = chunk.iter().map(|&i| buffer.actions[i].clone()).collect();
            let old: Vec<f64> = chunk.iter().map(|&i| buffer.log_probs[i]).collect();
            let mut adv: Vec<f64> = chunk.iter().map(|&i| buffer.advantages[i]).collect();
            normalize_advantages(&mut adv);
            let ret: Vec<f64> = chunk.iter().map(|&i| buffer.returns[i]).collect();

            let mut g = Graph::new();
            let params = &learner.model.params;
            let loss = ppo_loss_graph(
                &mut g,
                params,
                &learner.model,
                Tensor::new(vec![chunk.len(), width], feats)?,
                &actions,
                &old,
                &adv,
                &ret,
                config,
            )?;
            let total = g.value(loss.total).item();
            let ratios = g.value(loss.ratio).data();
            let m = ratios.len() as f64;
            let mean_ratio = ratios.iter().sum::<f64>() / m;
            let clip_frac = ratios.iter().filter(|r| (*r - 1.0).abs() > config.clip_range).count() as f64 / m;
            let approx_kl = ratios.iter().map(|r| (r - 1.0) - r.ln()).sum::<f64>() / m;
            if stats.minibatches == 0 {
                stats.first_ratio_deviation = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            }
            let (pl, vl, ent) = (g.value(loss.policy).item(), g.value(loss.value).item(), g.value(loss.entropy).item());
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "ppo loss {total}: policy {pl}, value {vl}, entropy {ent}, mean ratio {mean_ratio}, after {} minibatches",
                    stats.minibatches
                )));
            }
            let mut grads = g.backward(loss.total)?;
            drop(g);
            let norm = grads.clip_global_norm(config.max_grad_norm);
            learner.optimizer.step(&mut learner.model.params, &grads).map_err(|e| Error::Diverged(e.to_string()))?;

            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.entropy += ent;
            stats.mean_ratio += mean_ratio;
            stats.clip_fraction += clip_frac;
            stats.approx_kl += approx_kl;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    for v in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.mean_ratio,
        &mut stats.clip_fraction,
        &mut stats.approx_kl,
        &mut stats.grad_norm,
    ] {
        *v /= k;
    }
    debug!(
        "ppo update: policy {:.4} value {:.4} entropy {:.3} clip {:.3} kl {:.5}",
        stats.policy_loss, stats.value_loss, stats.entropy, stats.clip_fraction, stats.approx_kl
    );
    Ok(stats)
}
