//! Evaluation harness: embedding-distance correlation, success rates,
//! texture generalization and multi-seed scheme comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffnet::Tensor;
use log::info;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{embed_all, kmeans_fit};
use crate::cpc::EncoderModel;
use crate::envs::{render_pendulum, Action, EnvId, Environment, GridLayout, GridWorld, TextureSpec};
use crate::error::{Error, Result};
use crate::rl::{evaluate_success, train_policy, Agent, Featurizer, LearningCurve, PpoConfig};
use crate::shaping::{embedding_variance, RewardScheme};

/// Angle bins used by the texture angle-consistency score.
pub const ANGLE_BINS: usize = 8;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Invalid(format!("pearson needs two equal series of length >= 2 (got {} and {})", xs.len(), ys.len())));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Invalid("pearson is undefined for a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Least-squares `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    pearson(xs, ys)?;
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub true_distance: f64,
    pub embedding_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pair_count: usize,
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    #[serde(skip)]
    pub pairs: Vec<DistancePair>,
}

impl CorrelationReport {
    pub fn from_pairs(pairs: Vec<DistancePair>) -> Result<Self> {
        let xs: Vec<f64> = pairs.iter().map(|p| p.true_distance).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.embedding_distance).collect();
        let r = pearson(&xs, &ys)?;
        let (slope, intercept) = linear_fit(&xs, &ys)?;
        Ok(Self { pair_count: pairs.len(), r, slope, intercept, pairs })
    }
}

/// Correlates shortest-path distance with embedding L2 distance over uniformly random free-cell pairs.
pub fn distance_correlation(layout: &GridLayout, encoder: &EncoderModel, pair_count: usize, rng: &mut dyn RngCore) -> Result<CorrelationReport> {
    let world = GridWorld::new(layout.clone());
    let cells = layout.free_cells();
    let observations: Vec<Tensor> = cells.iter().map(|&c| world.observation_of(c)).collect();
    let refs: Vec<&Tensor> = observations.iter().collect();
    let z = embed_all(encoder, &refs)?;
    let mut pairs = Vec::with_capacity(pair_count);
    for _ in 0..pair_count {
        let a = rng.gen_range(0..cells.len());
        let b = rng.gen_range(0..cells.len());
        let d = layout.true_distance(cells[a], cells[b])? as f64;
        let e = z[a].iter().zip(&z[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        pairs.push(DistancePair { true_distance: d, embedding_distance: e });
    }
    CorrelationReport::from_pairs(pairs)
}

/// Success fraction of an arbitrary controller; `act` gets the env and the current observation.
pub fn success_rate_with(
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut dyn RngCore,
    mut act: impl FnMut(&dyn Environment, &Tensor) -> Result<Action>,
) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let mut hits = 0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        loop {
            let a = act(&*env, &obs)?;
            let out = env.step(&a)?;
            if out.success {
                hits += 1;
                break;
            }
            if out.done {
                break;
            }
            obs = out.observation;
        }
    }
    Ok(hits as f64 / episodes as f64)
}

/// Deterministic-action success rate of a trained agent under the sparse goal condition.
pub fn success_rate(
    agent: &Agent,
    env: &mut dyn Environment,
    featurizer: &Featurizer,
    scheme: &RewardScheme,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    evaluate_success(env, agent, featurizer, scheme, episodes, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub env: String,
    pub scheme: String,
    pub seed: u64,
    pub success: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<SuccessRow>,
}

impl SuccessTable {
    /// Mean success per (env, scheme).
    pub fn means(&self) -> BTreeMap<(String, String), f64> {
        let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            acc.entry((r.env.clone(), r.scheme.clone())).or_default().push(r.success);
        }
        acc.into_iter().map(|(k, v)| (k, mean(&v))).collect()
    }
}

/// Normalized mutual information with the arithmetic-mean normalizer; two constant labelings give 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    let h = |p: &BTreeMap<usize, f64>| -p.values().map(|v| v * v.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha + hb <= 1e-15 {
        return 1.0;
    }
    let mi: f64 = joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

/// Index of `theta` among [`ANGLE_BINS`] equal bins over (−π, π].
pub fn angle_bin(theta: f64) -> usize {
    let u = (theta + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
    ((u * ANGLE_BINS as f64).floor() as isize).clamp(0, ANGLE_BINS as isize - 1) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureReport {
    pub train_texture: String,
    pub holdout_texture: String,
    pub states: usize,
    pub k: usize,
    /// Fraction of states assigned the same cluster under both textures.
    pub agreement: f64,
    pub nmi_train: f64,
    pub nmi_holdout: f64,
    /// Embeddings collapsed to (almost) a point.
    pub degenerate: bool,
}

impl TextureReport {
    /// `|nmi_holdout − nmi_train| / nmi_train`.
    pub fn nmi_relative_gap(&self) -> f64 {
        if self.nmi_train <= 0.0 {
            return f64::INFINITY;
        }
        (self.nmi_holdout - self.nmi_train).abs() / self.nmi_train
    }
}

/// Renders `thetas` under both textures, clusters the training-texture embeddings and
/// scores cross-texture agreement and angle consistency.
pub fn texture_generalization(
    encoder: &EncoderModel,
    train: &TextureSpec,
    holdout: &TextureSpec,
    thetas: &[f64],
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<TextureReport> {
    let render = |spec: &TextureSpec| -> Result<Vec<Vec<f64>>> {
        let imgs: Vec<Tensor> = thetas.iter().map(|&t| render_pendulum(t, spec)).collect();
        embed_all(encoder, &imgs.iter().collect::<Vec<_>>())
    };
    let zt = render(train)?;
    let zh = if train == holdout { zt.clone() } else { render(holdout)? };
    let degenerate = embedding_variance(&zt) < 1e-6;
    let bins: Vec<usize> = thetas.iter().map(|&t| angle_bin(t)).collect();
    let (lt, lh) = if degenerate {
        (vec![0; thetas.len()], vec![0; thetas.len()])
    } else {
        let model = kmeans_fit(&zt, k, rng, 4, 100)?;
        let assign = |z: &[Vec<f64>]| z.iter().map(|e| model.assign(e)).collect::<Result<Vec<_>>>();
        (assign(&zt)?, assign(&zh)?)
    };
    let agreement = lt.iter().zip(&lh).filter(|(a, b)| a == b).count() as f64 / thetas.len().max(1) as f64;
    Ok(TextureReport {
        train_texture: train.tag.name().into(),
        holdout_texture: holdout.tag.name().into(),
        states: thetas.len(),
        k,
        agreement,
        nmi_train: nmi(&lt, &bins),
        nmi_holdout: nmi(&lh, &bins),
        degenerate,
    })
}

/// One arm of a comparison: a label, its scheme and the policy inputs.
#[derive(Debug, Clone)]
pub struct SchemeArm {
    pub label: String,
    pub scheme: RewardScheme,
    pub featurizer: Featurizer,
    pub config: PpoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub env_steps: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub label: String,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub curves: Vec<LearningCurve>,
    #[serde(skip)]
    pub agents: Vec<Agent>,
    /// Evaluation success of each seed's final policy.
    pub final_success: Vec<f64>,
    pub success_band: Vec<BandPoint>,
    pub return_band: Vec<BandPoint>,
}

impl ArmResult {
    pub fn mean_final_success(&self) -> f64 {
        mean(&self.final_success)
    }

    /// First env-step count at which the seed-mean evaluation success reaches `level`.
    pub fn steps_to_success(&self, level: f64) -> Option<usize> {
        self.success_band.iter().find(|p| p.mean >= level).map(|p| p.env_steps)
    }
}

/// Mean and range across curves, aligned by point index.
pub fn band(curves: &[LearningCurve], value: impl Fn(&crate::rl::CurvePoint) -> f64) -> Vec<BandPoint> {
    let len = curves.iter().map(LearningCurve::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vs: Vec<f64> = curves.iter().map(|c| value(&c.points[i])).collect();
            BandPoint {
                env_steps: curves[0].points[i].env_steps,
                mean: mean(&vs),
                min: vs.iter().copied().fold(f64::INFINITY, f64::min),
                max: vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Trains every arm on every seed and evaluates each final policy on `final_episodes` episodes.
pub fn compare_schemes(env: EnvId, arms: &[SchemeArm], seeds: &[u64], final_episodes: usize) -> Result<Vec<ArmResult>> {
    let mut results = Vec::with_capacity(arms.len());
    for arm in arms {
        let mut curves = Vec::new();
        let mut agents = Vec::new();
        let mut finals = Vec::new();
        for &seed in seeds {
            let mut e = env.make();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trained = train_policy(e.as_mut(), arm.scheme.clone(), &arm.featurizer, &arm.config, &mut rng)?;
            let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
            let s = success_rate(&trained.agent, e.as_mut(), &arm.featurizer, &arm.scheme, final_episodes, &mut eval_rng)?;
            info!("{env} {} seed {seed}: final success {s:.3}", arm.label);
            finals.push(s);
            curves.push(trained.curve);
            agents.push(trained.agent);
        }
        results.push(ArmResult {
            label: arm.label.clone(),
            seeds: seeds.to_vec(),
            success_band: band(&curves, |p| p.success_rate),
            return_band: band(&curves, |p| p.mean_env_return),
            curves,
            agents,
            final_success: finals,
        });
    }
    Ok(results)
}

/// `<env>_<experiment>_<seed>.csv`.
pub fn export_name(env: &str, experiment: &str, seed: u64) -> String {
    format!("{env}_{experiment}_{seed}.csv")
}

/// Writes `rows` as CSV and `summary` as JSON next to it; returns the CSV path.
pub fn export<T: Serialize, S: Serialize>(
    dir: impl AsRef<Path>,
    env: &str,
    experiment: &str,
    seed: u64,
    rows: &[T],
    summary: &S,
) -> Result<PathBuf> {
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.as_ref().join(export_name(env, experiment, seed));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Invalid(format!("{}: {e}", csv_path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush()?;
    let json_path = csv_path.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(summary)? + "\n")?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0];
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        // sxy = 5, sxx = 2, syy = 38/3
        let expected = 5.0 / (2.0f64 * 38.0 / 3.0).sqrt();
        assert!((pearson(&xs, &[2.0, 4.0, 7.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.9934).abs() < 1e-4);
        assert!(pearson(&xs, &[1.0, 1.0, 1.0]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn nmi_limits() {
        assert!((nmi(&[0, 0, 1, 1], &[5, 5, 7, 7]) - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).abs() < 1e-12);
    }

    #[test]
    fn angle_bins_cover_circle() {
        use std::f64::consts::PI;
        assert_eq!(angle_bin(-PI + 1e-9), 0);
        assert_eq!(angle_bin(PI), ANGLE_BINS - 1);
        assert_eq!(angle_bin(0.01), ANGLE_BINS / 2);
    }

    #[test]
    fn export_naming() {
        assert_eq!(export_name("umaze", "distance-correlation", 0), "umaze_distance-correlation_0.csv");
    }
}
