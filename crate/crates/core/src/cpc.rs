//! Contrastive predictive coding: encoder, GRU context, per-offset bilinear scores.

use std::path::Path;

use diffnet::{Activation, Adam, AdamConfig, ConvEncoder, Graph, GruCell, Mlp, ParameterSet, Tensor, Var};
use log::{debug, info, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::envs::TrajectorySet;
use crate::error::{Error, Result};

pub const ENCODER_KIND: &str = "cpc-encoder";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Same-offset targets of the other segments in the batch.
    InBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Dense stack over the flattened observation.
    Mlp,
    /// Two strided convolutions; image observations only.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpcConfig {
    /// Context length n.
    pub context: usize,
    /// Predict length K.
    pub predict: usize,
    /// Batch size B.
    pub batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub embedding: usize,
    pub context_size: usize,
    pub negatives: NegativeMode,
    pub encoder: EncoderKind,
    pub hidden: usize,
    /// Hidden-layer activation of the dense encoder.
    pub activation: Activation,
    pub conv_channels: [usize; 2],
    /// Spacing of start indices counted towards one epoch.
    pub segment_stride: usize,
    /// Half-width of the uniform init of the score matrices.
    pub score_init: f64,
}

impl Default for CpcConfig {
    fn default() -> Self {
        Self {
            context: 10,
            predict: 10,
            batch: 8,
            epochs: 2,
            learning_rate: 1e-3,
            embedding: 64,
            context_size: 256,
            negatives: NegativeMode::InBatch,
            encoder: EncoderKind::Mlp,
            hidden: 64,
            activation: Activation::Tanh,
            conv_channels: [8, 16],
            segment_stride: 1,
            score_init: 1e-3,
        }
    }
}

impl CpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("cpc: {m}")));
        if self.context < 1 || self.predict < 1 {
            return bad("context and predict lengths must be at least 1");
        }
        if self.batch < 2 {
            return bad("batch size must be at least 2 to have a negative");
        }
        if self.embedding == 0 || self.context_size == 0 || self.hidden == 0 || self.segment_stride == 0 {
            return bad("sizes and stride must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// States per segment.
    pub fn segment_len(&self) -> usize {
        self.context + self.predict
    }
}

#[derive(Debug, Clone, PartialEq)]
enum StateEncoder {
    Mlp(Mlp),
    Conv(ConvEncoder),
}

/// Encoder, GRU and score matrices `W_1..W_K` (each `embedding × context_size`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: CpcConfig,
    pub observation_shape: Vec<usize>,
    pub params: ParameterSet,
    encoder: StateEncoder,
    gru: GruCell,
}

fn score_name(k: usize) -> String {
    format!("score.w{k}")
}

impl EncoderModel {
    fn architecture(config: &CpcConfig, observation_shape: &[usize]) -> Result<(StateEncoder, GruCell)> {
        config.validate()?;
        let encoder = match config.encoder {
            EncoderKind::Mlp => {
                let flat = observation_shape.iter().product();
                StateEncoder::Mlp(Mlp::new("enc.", &[flat, config.hidden, config.embedding]).with_activation(config.activation))
            }
            EncoderKind::Conv => match *observation_shape {
                [h, w, c] => StateEncoder::Conv(ConvEncoder::new("enc.", [h, w, c], config.conv_channels, config.embedding)?),
                _ => return Err(Error::Config("conv encoder needs (height, width, channels) observations".into())),
            },
        };
        Ok((encoder, GruCell::new("gru.", config.embedding, config.context_size)))
    }

    pub fn new(config: CpcConfig, observation_shape: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let (encoder, gru) = Self::architecture(&config, observation_shape)?;
        let mut params = ParameterSet::new(json!({"type": "cpc"}));
        params.merge_prefixed(
            "",
            match &encoder {
                StateEncoder::Mlp(m) => m.init(rng),
                StateEncoder::Conv(c) => c.init(rng),
            },
        );
        params.merge_prefixed("", gru.init(rng));
        let s = config.score_init;
        for k in 1..=config.predict {
            params.insert(&score_name(k), diffnet::layers::uniform(rng, &[config.embedding, config.context_size], s));
        }
        Ok(Self { config, observation_shape: observation_shape.to_vec(), params, encoder, gru })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(config: CpcConfig, observation_shape: &[usize]) -> Result<Self> {
        let mut m = Self::new(config, observation_shape, &mut ChaCha8Rng::seed_from_u64(0))?;
        m.params = m.params.zeros_like();
        Ok(m)
    }

    pub fn embedding_size(&self) -> usize {
        self.config.embedding
    }

    fn obs_len(&self) -> usize {
        self.observation_shape.iter().product()
    }

    /// Encodes a stack of observations `[N, ..obs]` already on the tape.
    fn encode_var<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, x: Var, n: usize) -> Result<Var> {
        match &self.encoder {
            StateEncoder::Mlp(m) => {
                let flat = g.reshape(x, &[n, self.obs_len()])?;
                Ok(m.forward(g, params, flat)?)
            }
            StateEncoder::Conv(c) => Ok(c.forward(g, params, x)?),
        }
    }

    fn stack(&self, observations: &[&Tensor]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(observations.len() * self.obs_len());
        for o in observations {
            if o.shape() != self.observation_shape.as_slice() {
                return Err(Error::Net(diffnet::error::shape_err("observation", &self.observation_shape, o.shape())));
            }
            data.extend_from_slice(o.data());
        }
        let mut shape = vec![observations.len()];
        shape.extend_from_slice(&self.observation_shape);
        Ok(Tensor::new(shape, data)?)
    }

    /// Embeddings `[N, embedding]` of a batch of observations.
    pub fn encode_batch(&self, observations: &[&Tensor]) -> Result<Tensor> {
        let x = self.stack(observations)?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let z = self.encode_var(&mut g, &self.params, xv, observations.len())?;
        Ok(g.value(z).clone())
    }

    pub fn encode_state(&self, observation: &Tensor) -> Result<Tensor> {
        Ok(self.encode_batch(&[observation])?.reshape(&[self.config.embedding])?)
    }

    /// GRU summary of exactly `context` observations.
    pub fn encode_context(&self, observations: &[Tensor]) -> Result<Tensor> {
        if observations.len() != self.config.context {
            return Err(Error::Invalid(format!(
                "context needs {} observations, got {}",
                self.config.context,
                observations.len()
            )));
        }
        let refs: Vec<&Tensor> = observations.iter().collect();
        let z = self.encode_batch(&refs)?;
        let rows: Vec<Tensor> = (0..z.rows()).map(|r| Tensor::vector(z.row(r).to_vec())).collect();
        Ok(self.gru.apply(&self.params, &rows)?)
    }

    /// Records the InfoNCE loss for `batch` using `params` (normally `self.params`).
    pub fn infonce_graph<'a>(&self, g: &mut Graph<'a>, params: &'a ParameterSet, batch: &SegmentBatch) -> Result<Var> {
        let b = batch.len();
        if b < 2 {
            return Err(Error::Invalid("InfoNCE needs at least two segments".into()));
        }
        let (n, k_max) = (self.config.context, self.config.predict);
        if batch.context_len() != n || batch.predict_len() != k_max {
            return Err(Error::Invalid("segment batch does not match the model's context/predict lengths".into()));
        }
        // time-major rows: step s of segment i sits at s·B + i
        let len = n + k_max;
        let mut refs = Vec::with_capacity(len * b);
        for s in 0..len {
            for seg in &batch.segments {
                refs.push(&seg[s]);
            }
        }
        let x = g.input(self.stack(&refs)?);
        let z = self.encode_var(g, params, x, len * b)?;
        let steps: Vec<Var> = (0..n).map(|s| g.slice_rows(z, s * b, (s + 1) * b)).collect::<diffnet::Result<_>>()?;
        let c = self.gru.forward(g, params, &steps)?;
        let targets: Vec<usize> = (0..b).collect();
        let mut total: Option<Var> = None;
        for k in 1..=k_max {
            let zk = g.slice_rows(z, (n - 1 + k) * b, (n + k) * b)?;
            let w = g.param_from(params, &score_name(k))?;
            let cw = g.matmul_t(c, w)?;
            let logits = g.matmul_t(cw, zk)?;
            let ce = g.softmax_cross_entropy(logits, targets.clone())?;
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce)?,
            });
        }
        Ok(g.scale(total.expect("predict >= 1"), 1.0 / k_max as f64))
    }

    pub fn infonce_loss(&self, batch: &SegmentBatch) -> Result<f64> {
        let mut g = Graph::new();
        let loss = self.infonce_graph(&mut g, &self.params, batch)?;
        Ok(g.value(loss).item())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = json!({"config": self.config, "observation_shape": self.observation_shape});
        Ok(self.params.save(path, ENCODER_KIND, meta)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParameterSet::load(path, ENCODER_KIND)?;
        let config: CpcConfig = serde_json::from_value(meta["config"].clone())?;
        let observation_shape: Vec<usize> = serde_json::from_value(meta["observation_shape"].clone())?;
        let (encoder, gru) = Self::architecture(&config, &observation_shape)?;
        let model = Self { config, observation_shape, params, encoder, gru };
        let expected = Self::zeroed(model.config.clone(), &model.observation_shape)?;
        if expected.params.names().ne(model.params.names()) {
            return Err(Error::Invalid("encoder file parameters do not match its configuration".into()));
        }
        Ok(model)
    }
}

/// `B` segments of `context + predict` consecutive states each.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub segments: Vec<Vec<Tensor>>,
    /// `(trajectory, start)` of each segment.
    pub origins: Vec<(usize, usize)>,
    context: usize,
    predict: usize,
    /// Trajectories too short to hold a segment.
    pub skipped: usize,
}

impl SegmentBatch {
    pub fn new(segments: Vec<Vec<Tensor>>, context: usize, predict: usize) -> Result<Self> {
        if segments.iter().any(|s| s.len() != context + predict) {
            return Err(Error::Invalid("segment length must equal context + predict".into()));
        }
        let origins = vec![(0, 0); segments.len()];
        Ok(Self { segments, origins, context, predict, skipped: 0 })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn context_len(&self) -> usize {
        self.context
    }

    pub fn predict_len(&self) -> usize {
        self.predict
    }

    /// Same batch with segments reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            segments: order.iter().map(|&i| self.segments[i].clone()).collect(),
            origins: order.iter().map(|&i| self.origins[i]).collect(),
            ..self.clone()
        }
    }
}

fn eligible(set: &TrajectorySet, len: usize) -> Vec<usize> {
    (0..set.len()).filter(|&i| set.trajectories[i].observations.len() >= len).collect()
}

/// Draws `config.batch` segments: trajectory uniformly among those long
/// enough, then start index uniformly.
pub fn sample_segments(set: &TrajectorySet, config: &CpcConfig, rng: &mut dyn RngCore) -> Result<SegmentBatch> {
    let len = config.segment_len();
    let ok = eligible(set, len);
    if ok.is_empty() {
        return Err(Error::Invalid(format!("no trajectory holds {len} consecutive states")));
    }
    let mut segments = Vec::with_capacity(config.batch);
    let mut origins = Vec::with_capacity(config.batch);
    for _ in 0..config.batch {
        let t = ok[rng.gen_range(0..ok.len())];
        let obs = &set.trajectories[t].observations;
        let start = rng.gen_range(0..=obs.len() - len);
        segments.push(obs[start..start + len].to_vec());
        origins.push((t, start));
    }
    Ok(SegmentBatch { segments, origins, context: config.context, predict: config.predict, skipped: set.len() - ok.len() })
}

/// Segments counted towards one epoch.
pub fn segments_per_epoch(set: &TrajectorySet, config: &CpcConfig) -> usize {
    let len = config.segment_len();
    set.trajectories
        .iter()
        .filter(|t| t.observations.len() >= len)
        .map(|t| (t.observations.len() - len) / config.segment_stride + 1)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcTraining {
    pub model: EncoderModel,
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
}

impl CpcTraining {
    /// Mean loss over the last `fraction` of batches.
    pub fn smoothed_final_loss(&self, fraction: f64) -> f64 {
        tail_mean(&self.losses, fraction)
    }
}

pub fn tail_mean(xs: &[f64], fraction: f64) -> f64 {
    let n = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len().max(1));
    xs[xs.len().saturating_sub(n)..].iter().sum::<f64>() / n as f64
}

pub fn head_mean(xs: &[f64], fraction: f64) -> f64 {
    let n = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len().max(1));
    xs[..n.min(xs.len())].iter().sum::<f64>() / n as f64
}

/// Adam on encoder, GRU and score matrices for `config.epochs` passes of
/// `segments_per_epoch / batch` batches each.
pub fn train_cpc(set: &TrajectorySet, config: &CpcConfig, rng: &mut dyn RngCore) -> Result<CpcTraining> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Invalid("no trajectories to train on".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut model = EncoderModel::new(config.clone(), &set.observation_shape, &mut init_rng)?;
    let per_epoch = (segments_per_epoch(set, config) / config.batch).max(1);
    let skipped = set.len() - eligible(set, config.segment_len()).len();
    if skipped > 0 {
        warn!("{skipped} of {} trajectories are shorter than one segment and were skipped", set.len());
    }
    info!("cpc: {} epochs x {per_epoch} batches of {}", config.epochs, config.batch);
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), &model.params);
    let mut losses = Vec::with_capacity(per_epoch * config.epochs);
    for epoch in 0..config.epochs {
        for step in 0..per_epoch {
            let batch = sample_segments(set, config, rng)?;
            let (loss, grads) = {
                let mut g = Graph::new();
                let l = model.infonce_graph(&mut g, &model.params, &batch)?;
                let value = g.value(l).item();
                if !value.is_finite() {
                    let recent = &losses[losses.len().saturating_sub(5)..];
                    return Err(Error::Diverged(format!(
                        "cpc loss {value} at epoch {epoch} batch {step}; recent losses {recent:?}"
                    )));
                }
                (value, g.backward(l)?)
            };
            adam.step(&mut model.params, &grads)?;
            losses.push(loss);
            if step % 200 == 0 {
                debug!("cpc epoch {epoch} batch {step}: loss {loss:.4}");
            }
        }
        info!("cpc epoch {epoch}: mean loss {:.4}", tail_mean(&losses, 1.0 / (epoch + 1) as f64));
    }
    Ok(CpcTraining { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_random_trajectories, GridLayout, GridWorld, LayoutTag, Pendulum};

    fn toy_config() -> CpcConfig {
        CpcConfig { context: 3, predict: 2, batch: 4, embedding: 8, context_size: 6, hidden: 8, ..Default::default() }
    }

    fn pendulum_set(count: usize, len: usize, seed: u64) -> TrajectorySet {
        collect_random_trajectories(&mut Pendulum::new(), count, len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_model_gives_log_b() {
        let set = pendulum_set(4, 40, 0);
        let cfg = CpcConfig { batch: 8, ..Default::default() };
        let model = EncoderModel::zeroed(cfg.clone(), &[3]).unwrap();
        let batch = sample_segments(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((model.infonce_loss(&batch).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert!((8f64.ln() - 2.0794).abs() < 1e-4);
        let obs = &set.trajectories[0].observations;
        assert!(model.encode_state(&obs[0]).unwrap().data().iter().all(|&v| v == 0.0));
        let ctx = model.encode_context(&obs[..10]).unwrap();
        assert_eq!(ctx.shape(), &[256]);
        assert!(ctx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let cfg = toy_config();
        let model = EncoderModel::zeroed(cfg.clone(), &[3]).unwrap();
        let set = pendulum_set(2, 10, 0);
        let one = SegmentBatch::new(vec![set.trajectories[0].observations[..5].to_vec()], 3, 2).unwrap();
        assert!(model.infonce_loss(&one).is_err());
        assert!(CpcConfig { batch: 1, ..cfg }.validate().is_err());
    }

    #[test]
    fn exact_length_has_single_start() {
        let set = pendulum_set(3, 4, 0); // 5 states each
        let cfg = toy_config();
        let batch = sample_segments(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(batch.origins.iter().all(|&(_, s)| s == 0));
        assert_eq!(segments_per_epoch(&set, &cfg), 3);
    }

    #[test]
    fn short_trajectories_are_skipped_or_rejected() {
        let cfg = toy_config();
        let mut set = pendulum_set(2, 10, 0);
        set.trajectories[0].observations.truncate(3);
        let batch = sample_segments(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch.skipped, 1);
        assert!(batch.origins.iter().all(|&(t, _)| t == 1));
        set.trajectories[1].observations.truncate(3);
        assert!(sample_segments(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn context_length_is_checked() {
        let model = EncoderModel::zeroed(toy_config(), &[3]).unwrap();
        let set = pendulum_set(1, 10, 0);
        assert!(model.encode_context(&set.trajectories[0].observations[..2]).is_err());
        assert!(model.encode_state(&Tensor::vector(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn grid_context_is_256_wide() {
        let mut env = GridWorld::new(GridLayout::builtin(LayoutTag::UMaze));
        let set = collect_random_trajectories(&mut env, 1, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let model = EncoderModel::new(CpcConfig::default(), &[17, 17, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let obs = &set.trajectories[0].observations;
        assert_eq!(model.encode_state(&obs[0]).unwrap().shape(), &[64]);
        assert_eq!(model.encode_context(&obs[..10]).unwrap().shape(), &[256]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        let model = EncoderModel::new(toy_config(), &[3], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        model.save(&path).unwrap();
        assert_eq!(EncoderModel::load(&path).unwrap(), model);
    }
}
