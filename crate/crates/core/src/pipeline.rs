//! File-based experiment stages: collect, train-cpc, cluster, train-rl, eval.
//!
//! Every stage reads its inputs from files, writes its outputs to files named
//! `<env>_<artifact>_<seed>.<ext>` under the output directory, and draws its
//! randomness from a stream derived from `(seed, stage)` only.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffnet::Tensor;
use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::clustering::{embed_all, identify_goal_cluster, kmeans_fit, pca_2d, sample_states, write_cluster_csv, ClusterModel};
use crate::config::{Experiment, ExperimentConfig, SchemeBlock};
use crate::cpc::{tail_mean, train_cpc, EncoderModel};
use crate::envs::pendulum::PendulumState;
use crate::envs::{
    collect_random_trajectories, render_grid, render_pendulum, EnvId, Environment, GridLayout, GridWorld, TextureSpec,
    Trajectory, TrajectorySet,
};
use crate::error::{Error, Result};
use crate::eval::{compare_schemes, distance_correlation, export, success_rate, texture_generalization, SchemeArm, SuccessRow, SuccessTable};
use crate::rl::{train_policy, Agent, FeatureMode, Featurizer, PpoConfig};
use crate::shaping::{calibrate_beta, warn_if_degenerate, RewardScheme, SchemeKind};

/// States sampled when calibrating β.
pub const CALIBRATION_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Collect,
    TrainCpc,
    Cluster,
    TrainRl,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Collect, Stage::TrainCpc, Stage::Cluster, Stage::TrainRl, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::TrainCpc => "train-cpc",
            Stage::Cluster => "cluster",
            Stage::TrainRl => "train-rl",
            Stage::Eval => "eval",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

/// Renders stored observations as textured images, cycling `textures` over trajectories.
pub fn render_trajectories(set: &TrajectorySet, textures: &[TextureSpec]) -> Result<TrajectorySet> {
    if textures.is_empty() {
        return Err(Error::Config("no textures to render with".into()));
    }
    let trajectories = set
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let tex = &textures[i % textures.len()];
            let observations = t.observations.iter().map(|o| render_observation(set.env, o, tex)).collect::<Result<_>>()?;
            Ok(Trajectory { observations, ..t.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let observation_shape = trajectories[0].observations[0].shape().to_vec();
    Ok(TrajectorySet { observation_shape, trajectories, ..set.clone() })
}

/// Image of one vector observation.
pub fn render_observation(env: EnvId, observation: &Tensor, texture: &TextureSpec) -> Result<Tensor> {
    match env {
        EnvId::Pendulum => Ok(render_pendulum(PendulumState::from_observation(observation).theta, texture)),
        EnvId::GridWorld(tag) => {
            let cell = GridWorld::agent_cell(observation).ok_or_else(|| Error::Invalid("observation has no agent".into()))?;
            Ok(render_grid(&GridLayout::builtin(tag), cell, texture))
        }
        EnvId::Reacher => Err(Error::Config("reacher has no image rendering".into())),
    }
}

/// β so that the mean penalty over stored states (each paired with its episode's goal) is the calibrated level.
pub fn calibrate_distance_beta(
    kind: SchemeKind,
    env: &dyn Environment,
    set: &TrajectorySet,
    encoder: Option<&EncoderModel>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let states = sample_states(set, CALIBRATION_SAMPLES, rng);
    let goals: Vec<Tensor> = states.iter().map(|s| env.goal_observation_for(s)).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let d: Vec<f64> = match (kind, encoder) {
        (SchemeKind::RawDistance, _) => states.iter().zip(&goals).map(|(s, g)| sq(s.data(), g.data())).collect(),
        (SchemeKind::EmbeddingDistance, Some(e)) => {
            let zs = embed_all(e, &states)?;
            let zg = embed_all(e, &goals.iter().collect::<Vec<_>>())?;
            zs.iter().zip(&zg).map(|(a, b)| sq(a, b)).collect()
        }
        _ => return Err(Error::Config(format!("{kind} has no distance scale"))),
    };
    calibrate_beta(&d)
}

/// Models a scheme block may need.
#[derive(Debug, Clone, Default)]
pub struct SchemeInputs<'a> {
    pub trajectories: Option<&'a TrajectorySet>,
    pub encoder: Option<Arc<EncoderModel>>,
    pub clusters: Option<Arc<ClusterModel>>,
}

fn need<T: Clone>(x: &Option<T>, what: &str, kind: SchemeKind) -> Result<T> {
    x.clone().ok_or_else(|| Error::Config(format!("{kind} needs {what}")))
}

pub fn build_scheme(block: &SchemeBlock, env: &dyn Environment, inputs: &SchemeInputs<'_>, rng: &mut dyn RngCore) -> Result<RewardScheme> {
    let kind = block.kind;
    let beta = |encoder: Option<&EncoderModel>, rng: &mut dyn RngCore| -> Result<f64> {
        match block.beta {
            Some(b) if b > 0.0 => Ok(b),
            Some(_) => Err(Error::Config("scheme.beta must be positive".into())),
            None => {
                let set = inputs.trajectories.ok_or_else(|| Error::Config(format!("{kind} needs trajectories to calibrate beta")))?;
                calibrate_distance_beta(kind, env, set, encoder, rng)
            }
        }
    };
    let scheme = match kind {
        SchemeKind::Sparse => RewardScheme::Sparse,
        SchemeKind::HandShaped => RewardScheme::HandShaped,
        SchemeKind::RawDistance => RewardScheme::RawDistance { beta: beta(None, rng)? },
        SchemeKind::EmbeddingDistance => {
            let encoder = need(&inputs.encoder, "an encoder", kind)?;
            let b = beta(Some(&encoder), rng)?;
            RewardScheme::EmbeddingDistance { beta: b, encoder }
        }
        SchemeKind::ClusterBonus => RewardScheme::cluster_bonus(
            need(&inputs.encoder, "an encoder", kind)?,
            need(&inputs.clusters, "clusters", kind)?,
            block.bonus,
            block.two_policy,
        )?,
    };
    scheme.check_compatible(env)?;
    Ok(scheme)
}

/// One seed's view of an experiment config.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
    env: EnvId,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = config.env.env_id()?;
        Ok(Self { config, out: out.into(), seed, env })
    }

    pub fn env_id(&self) -> EnvId {
        self.env
    }

    fn file(&self, artifact: &str, ext: &str) -> PathBuf {
        self.out.join(format!("{}_{artifact}_{}.{ext}", self.env, self.seed))
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.config.artifacts.trajectories.clone().unwrap_or_else(|| self.file("trajectories", "bin"))
    }

    pub fn encoder_path(&self) -> PathBuf {
        self.config.artifacts.encoder.clone().unwrap_or_else(|| self.file("encoder", "bin"))
    }

    pub fn clusters_path(&self) -> PathBuf {
        self.config.artifacts.clusters.clone().unwrap_or_else(|| self.file("clusters", "bin"))
    }

    pub fn policy_path(&self) -> PathBuf {
        self.config.artifacts.policy.clone().unwrap_or_else(|| self.file(&format!("policy-{}", self.config.scheme.label()), "bin"))
    }

    pub fn curve_path(&self, label: &str) -> PathBuf {
        self.file(&format!("curve-{label}"), "csv")
    }

    fn rng(&self, stage: Stage) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stage.stream());
        r
    }

    fn textures(&self) -> Option<Vec<TextureSpec>> {
        self.config.env.texture.as_ref().map(|t| t.train.iter().map(|&tag| TextureSpec::new(tag, t.seed)).collect())
    }

    fn uses_encoder(&self, block: &SchemeBlock) -> bool {
        matches!(block.kind, SchemeKind::EmbeddingDistance | SchemeKind::ClusterBonus)
            || block.feature_mode.unwrap_or(self.config.ppo.feature_mode) == FeatureMode::Embedding
    }

    /// Upstream files a stage reads.
    pub fn inputs(&self, stage: Stage) -> Vec<(Stage, PathBuf)> {
        let scheme_inputs = |block: &SchemeBlock| {
            let mut v = Vec::new();
            if self.uses_encoder(block) {
                v.push((Stage::TrainCpc, self.encoder_path()));
            }
            if block.kind == SchemeKind::ClusterBonus {
                v.push((Stage::Cluster, self.clusters_path()));
            }
            if matches!(block.kind, SchemeKind::RawDistance | SchemeKind::EmbeddingDistance) && block.beta.is_none() {
                v.push((Stage::Collect, self.trajectories_path()));
            }
            v
        };
        let mut v = match stage {
            Stage::Collect => Vec::new(),
            Stage::TrainCpc => vec![(Stage::Collect, self.trajectories_path())],
            Stage::Cluster => vec![(Stage::Collect, self.trajectories_path()), (Stage::TrainCpc, self.encoder_path())],
            Stage::TrainRl => scheme_inputs(&self.config.scheme),
            Stage::Eval => match self.config.eval.experiment {
                Experiment::DistanceCorrelation | Experiment::Texture => vec![(Stage::TrainCpc, self.encoder_path())],
                Experiment::Success => {
                    let mut v = vec![(Stage::TrainRl, self.policy_path())];
                    if self.uses_encoder(&self.config.scheme) {
                        v.push((Stage::TrainCpc, self.encoder_path()));
                    }
                    if self.config.scheme.two_policy {
                        v.push((Stage::Cluster, self.clusters_path()));
                    }
                    v
                }
                Experiment::Compare => self.config.eval.schemes.iter().flat_map(scheme_inputs).collect(),
            },
        };
        v.dedup();
        v
    }

    /// Fails with the first missing upstream artifact, before any work is done.
    pub fn check_inputs(&self, stage: Stage) -> Result<()> {
        self.check_stage_config(stage)?;
        for (upstream, path) in self.inputs(stage) {
            if !path.is_file() {
                return Err(Error::MissingArtifact { stage: upstream.name().into(), path: path.display().to_string() });
            }
        }
        Ok(())
    }

    fn check_stage_config(&self, stage: Stage) -> Result<()> {
        let c = &self.config;
        match stage {
            Stage::TrainRl if c.env.texture.is_some() => {
                Err(Error::Config("policies act on vector observations; drop env.texture for train-rl".into()))
            }
            Stage::Eval => match c.eval.experiment {
                Experiment::DistanceCorrelation if !matches!(self.env, EnvId::GridWorld(_)) || c.env.texture.is_some() => {
                    Err(Error::Config("distance-correlation needs a gridworld with vector observations".into()))
                }
                Experiment::Texture if !matches!(self.env, EnvId::Pendulum) || c.env.texture.as_ref().and_then(|t| t.holdout).is_none() => {
                    Err(Error::Config("texture experiment needs pendulum with env.texture.holdout".into()))
                }
                Experiment::Compare if c.eval.schemes.is_empty() => Err(Error::Config("compare needs eval.schemes".into())),
                Experiment::Success | Experiment::Compare if c.env.texture.is_some() => {
                    Err(Error::Config("policies act on vector observations; drop env.texture".into()))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn run(&self, stage: Stage) -> Result<StageReport> {
        self.check_inputs(stage)?;
        std::fs::create_dir_all(&self.out)?;
        info!("{} seed {}: {}", self.env, self.seed, stage.name());
        let (outputs, summary) = match stage {
            Stage::Collect => self.collect()?,
            Stage::TrainCpc => self.train_cpc()?,
            Stage::Cluster => self.cluster()?,
            Stage::TrainRl => self.train_rl()?,
            Stage::Eval => self.eval()?,
        };
        Ok(StageReport { stage: stage.name(), seed: self.seed, outputs, summary })
    }

    fn collect(&self) -> Result<(Vec<PathBuf>, Value)> {
        let mut rng = self.rng(Stage::Collect);
        let mut env = self.env.make();
        let c = &self.config.collect;
        let mut set = collect_random_trajectories(env.as_mut(), c.count, c.max_len, &mut rng)?;
        if let Some(tex) = self.textures() {
            set = render_trajectories(&set, &tex)?;
        }
        let path = self.trajectories_path();
        set.save(&path)?;
        let summary = json!({
            "trajectories": set.len(),
            "steps": set.total_steps(),
            "mean_length": set.total_steps() as f64 / set.len() as f64,
            "observation_shape": set.observation_shape,
        });
        Ok((vec![path], summary))
    }

    fn load_set(&self) -> Result<TrajectorySet> {
        let set = TrajectorySet::load(self.trajectories_path())?;
        if set.env != self.env {
            return Err(Error::Config(format!("trajectory file holds {} data, config says {}", set.env, self.env)));
        }
        Ok(set)
    }

    fn load_encoder(&self) -> Result<Arc<EncoderModel>> {
        Ok(Arc::new(EncoderModel::load(self.encoder_path())?))
    }

    fn train_cpc(&self) -> Result<(Vec<PathBuf>, Value)> {
        let mut rng = self.rng(Stage::TrainCpc);
        let set = self.load_set()?;
        let trained = train_cpc(&set, &self.config.cpc, &mut rng)?;
        let path = self.encoder_path();
        trained.model.save(&path)?;
        let loss_path = self.file("cpc-loss", "csv");
        let rows: Vec<_> = trained.losses.iter().enumerate().map(|(i, l)| LossRow { batch: i, loss: *l }).collect();
        write_csv(&loss_path, &rows)?;
        let summary = json!({
            "batches": trained.losses.len(),
            "initial_loss": trained.losses.first(),
            "smoothed_final_loss": tail_mean(&trained.losses, 0.1),
            "ln_batch": (self.config.cpc.batch as f64).ln(),
        });
        Ok((vec![path, loss_path], summary))
    }

    /// Goal observation in the stored observation space (rendered when images are used).
    fn stored_goal(&self, env: &dyn Environment) -> Result<Tensor> {
        let g = env.goal_observation();
        match self.textures() {
            Some(tex) => render_observation(self.env, &g, &tex[0]),
            None => Ok(g),
        }
    }

    fn cluster(&self) -> Result<(Vec<PathBuf>, Value)> {
        let mut rng = self.rng(Stage::Cluster);
        let set = self.load_set()?;
        let encoder = self.load_encoder()?;
        let cb = &self.config.cluster;
        let states = sample_states(&set, cb.samples, &mut rng);
        warn_if_degenerate(&encoder, &states)?;
        let z = embed_all(&encoder, &states)?;
        let fitted = kmeans_fit(&z, cb.k, &mut rng, cb.restarts, cb.max_iters)?;
        let mut env = self.env.make();
        env.reset(&mut rng);
        let goal = self.stored_goal(env.as_ref())?;
        let model = identify_goal_cluster(&fitted, &encoder, &goal)?;
        let path = self.clusters_path();
        model.save(&path)?;

        let labels = z.iter().map(|e| model.assign(e)).collect::<Result<Vec<_>>>()?;
        let (names, coords) = state_coordinates(self.env, &states, self.textures().is_some());
        let csv_path = self.file("clusters", "csv");
        write_cluster_csv(&csv_path, &names, &coords, &labels, &pca_2d(&z))?;
        let summary = json!({"k": model.k(), "inertia": model.inertia, "goal_cluster": model.goal, "samples": states.len()});
        Ok((vec![path, csv_path], summary))
    }

    fn scheme_inputs<'a>(&self, block: &SchemeBlock, set: Option<&'a TrajectorySet>) -> Result<SchemeInputs<'a>> {
        Ok(SchemeInputs {
            trajectories: set,
            encoder: if self.uses_encoder(block) { Some(self.load_encoder()?) } else { None },
            clusters: if block.kind == SchemeKind::ClusterBonus {
                Some(Arc::new(ClusterModel::load(self.clusters_path())?))
            } else {
                None
            },
        })
    }

    fn featurizer(&self, block: &SchemeBlock, inputs: &SchemeInputs<'_>) -> Result<(Featurizer, PpoConfig)> {
        let mode = block.feature_mode.unwrap_or(self.config.ppo.feature_mode);
        let config = PpoConfig { feature_mode: mode, ..self.config.ppo.clone() };
        let f = match mode {
            FeatureMode::Raw => Featurizer::Raw,
            FeatureMode::Embedding => Featurizer::Embedding(need(&inputs.encoder, "an encoder", block.kind)?),
        };
        Ok((f, config))
    }

    fn needs_trajectories(block: &SchemeBlock) -> bool {
        matches!(block.kind, SchemeKind::RawDistance | SchemeKind::EmbeddingDistance) && block.beta.is_none()
    }

    fn arm(&self, block: &SchemeBlock, set: Option<&TrajectorySet>, rng: &mut ChaCha8Rng) -> Result<SchemeArm> {
        let inputs = self.scheme_inputs(block, set)?;
        let env = self.env.make();
        let scheme = build_scheme(block, env.as_ref(), &inputs, rng)?;
        let (featurizer, config) = self.featurizer(block, &inputs)?;
        Ok(SchemeArm { label: block.label(), scheme, featurizer, config })
    }

    fn train_rl(&self) -> Result<(Vec<PathBuf>, Value)> {
        let mut rng = self.rng(Stage::TrainRl);
        let block = &self.config.scheme;
        let set = if Self::needs_trajectories(block) { Some(self.load_set()?) } else { None };
        let arm = self.arm(block, set.as_ref(), &mut rng)?;
        let mut env = self.env.make();
        let trained = train_policy(env.as_mut(), arm.scheme.clone(), &arm.featurizer, &arm.config, &mut rng)?;
        let path = self.policy_path();
        trained.agent.save(&path)?;
        let curve_path = self.curve_path(&arm.label);
        trained.curve.write_csv(&curve_path)?;
        let summary = json!({
            "scheme": arm.label,
            "beta": scheme_beta(&arm.scheme),
            "iterations": trained.curve.len(),
            "final_success": trained.curve.final_success(),
        });
        Ok((vec![path, curve_path], summary))
    }

    fn eval(&self) -> Result<(Vec<PathBuf>, Value)> {
        let mut rng = self.rng(Stage::Eval);
        let env_name = self.env.name();
        let experiment = self.config.eval.experiment;
        match experiment {
            Experiment::DistanceCorrelation => {
                let EnvId::GridWorld(tag) = self.env else { unreachable!("checked") };
                let encoder = self.load_encoder()?;
                let report = distance_correlation(&GridLayout::builtin(tag), &encoder, self.config.eval.pairs, &mut rng)?;
                let path = export(&self.out, &env_name, experiment.name(), self.seed, &report.pairs, &report)?;
                Ok((vec![path], serde_json::to_value(&report)?))
            }
            Experiment::Success => {
                let block = &self.config.scheme;
                let inputs = self.scheme_inputs(block, None)?;
                let agent = Agent::load(self.policy_path())?;
                let featurizer = match agent.feature_mode {
                    FeatureMode::Raw => Featurizer::Raw,
                    FeatureMode::Embedding => Featurizer::Embedding(need(&inputs.encoder, "an encoder", block.kind)?),
                };
                let tracker = match (&inputs.encoder, &inputs.clusters) {
                    (Some(e), Some(c)) if agent.seek.is_some() => RewardScheme::cluster_bonus(e.clone(), c.clone(), block.bonus, true)?,
                    _ => RewardScheme::Sparse,
                };
                let mut env = self.env.make();
                let s = success_rate(&agent, env.as_mut(), &featurizer, &tracker, self.config.eval.episodes, &mut rng)?;
                let table = SuccessTable {
                    episodes: self.config.eval.episodes,
                    seeds: vec![self.seed],
                    rows: vec![SuccessRow { env: env_name.clone(), scheme: block.label(), seed: self.seed, success: s }],
                };
                let path = export(&self.out, &env_name, experiment.name(), self.seed, &table.rows, &table)?;
                Ok((vec![path], serde_json::to_value(&table)?))
            }
            Experiment::Texture => {
                let tb = self.config.env.texture.as_ref().expect("checked");
                let encoder = self.load_encoder()?;
                let train = TextureSpec::new(tb.train[0], tb.seed);
                let holdout = TextureSpec::new(tb.holdout.expect("checked"), tb.seed);
                let thetas: Vec<f64> = {
                    use rand::Rng;
                    (0..self.config.eval.texture_states).map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).collect()
                };
                let report = texture_generalization(&encoder, &train, &holdout, &thetas, self.config.cluster.k, &mut rng)?;
                let path = export(&self.out, &env_name, experiment.name(), self.seed, std::slice::from_ref(&report), &report)?;
                Ok((vec![path], serde_json::to_value(&report)?))
            }
            Experiment::Compare => {
                let blocks = &self.config.eval.schemes;
                let set = if blocks.iter().any(Self::needs_trajectories) { Some(self.load_set()?) } else { None };
                let arms = blocks.iter().map(|b| self.arm(b, set.as_ref(), &mut rng)).collect::<Result<Vec<_>>>()?;
                let results = compare_schemes(self.env, &arms, &self.config.seeds, self.config.eval.episodes)?;
                let mut outputs = Vec::new();
                let mut rows = Vec::new();
                for r in &results {
                    for (seed, curve) in r.seeds.iter().zip(&r.curves) {
                        let p = self.out.join(format!("{}_curve-{}_{}.csv", env_name, r.label, seed));
                        curve.write_csv(&p)?;
                        outputs.push(p);
                    }
                    for (s, ret) in r.success_band.iter().zip(&r.return_band) {
                        rows.push(BandRow {
                            scheme: r.label.clone(),
                            env_steps: s.env_steps,
                            success_mean: s.mean,
                            success_min: s.min,
                            success_max: s.max,
                            return_mean: ret.mean,
                            return_min: ret.min,
                            return_max: ret.max,
                        });
                    }
                }
                let summary = json!({
                    "seeds": self.config.seeds,
                    "episodes": self.config.eval.episodes,
                    "arms": results.iter().map(|r| json!({
                        "scheme": r.label,
                        "final_success": r.final_success,
                        "mean_final_success": r.mean_final_success(),
                        "steps_to_half_success": r.steps_to_success(0.5),
                    })).collect::<Vec<_>>(),
                });
                outputs.push(export(&self.out, &env_name, experiment.name(), self.seed, &rows, &summary)?);
                Ok((outputs, summary))
            }
        }
    }
}

#[derive(Serialize)]
struct LossRow {
    batch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct BandRow {
    scheme: String,
    env_steps: usize,
    success_mean: f64,
    success_min: f64,
    success_max: f64,
    return_mean: f64,
    return_min: f64,
    return_max: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

fn scheme_beta(scheme: &RewardScheme) -> Option<f64> {
    match scheme {
        RewardScheme::RawDistance { beta } | RewardScheme::EmbeddingDistance { beta, .. } => Some(*beta),
        _ => None,
    }
}

/// Human-readable state coordinates for the cluster export (none for images).
fn state_coordinates(env: EnvId, states: &[&Tensor], images: bool) -> (Vec<&'static str>, Vec<Vec<f64>>) {
    if images {
        return (Vec::new(), vec![Vec::new(); states.len()]);
    }
    match env {
        EnvId::GridWorld(_) => (
            vec!["row", "col"],
            states
                .iter()
                .map(|s| GridWorld::agent_cell(s).map_or(vec![f64::NAN, f64::NAN], |(r, c)| vec![r as f64, c as f64]))
                .collect(),
        ),
        EnvId::Pendulum => (
            vec!["theta", "omega"],
            states
                .iter()
                .map(|s| {
                    let p = PendulumState::from_observation(s);
                    vec![p.theta, p.omega]
                })
                .collect(),
        ),
        EnvId::Reacher => (
            vec!["tip_x", "tip_y"],
            states
                .iter()
                .map(|s| {
                    let d = s.data();
                    vec![d[8] + d[4], d[9] + d[5]]
                })
                .collect(),
        ),
    }
}
