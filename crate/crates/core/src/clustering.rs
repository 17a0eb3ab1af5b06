//! k-means over state embeddings and goal-cluster identification.

use std::io::Write;
use std::path::Path;

use diffnet::{Container, Tensor};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::cpc::EncoderModel;
use crate::envs::TrajectorySet;
use crate::error::{Error, Result};

pub const CLUSTER_KIND: &str = "clusters";

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub goal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClusterMeta {
    k: usize,
    dim: usize,
    inertia: f64,
    goal: Option<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; the first one wins ties.
fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn assign(&self, embedding: &[f64]) -> Result<usize> {
        if embedding.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "embedding has {} dims, centroids have {}",
                embedding.len(),
                self.dim()
            )));
        }
        Ok(nearest(&self.centroids, embedding).0)
    }

    pub fn goal_cluster(&self) -> Result<usize> {
        self.goal.ok_or_else(|| Error::Invalid("goal cluster has not been identified".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = ClusterMeta { k: self.k(), dim: self.dim(), inertia: self.inertia, goal: self.goal };
        let mut c = Container::new(CLUSTER_KIND, serde_json::to_value(meta)?);
        let flat: Vec<f64> = self.centroids.iter().flatten().copied().collect();
        c.push("centroids", Tensor::matrix(self.k(), self.dim(), flat)?);
        Ok(c.write(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind(CLUSTER_KIND)?;
        let meta: ClusterMeta = serde_json::from_value(c.meta.clone())?;
        let t = c.tensor("centroids")?;
        if t.shape() != [meta.k, meta.dim] || meta.goal.is_some_and(|g| g >= meta.k) {
            return Err(Error::Invalid("cluster file header does not match its payload".into()));
        }
        let centroids = (0..meta.k).map(|r| t.row(r).to_vec()).collect();
        Ok(Self { centroids, inertia: meta.inertia, goal: meta.goal })
    }
}

/// Nearest-centroid label of every embedding (lowest index on ties).
pub fn assign_cluster(model: &ClusterModel, embedding: &Tensor) -> Result<usize> {
    model.assign(embedding.data())
}

/// k-means++ seeding: first centre uniform, the rest by squared distance.
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[idx].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

/// Lloyd iterations from `centroids` until assignments stop changing or
/// `max_iters` is reached. An emptied cluster keeps its previous centre.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> LloydRun {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (j, d) = nearest(&centroids, p);
            inertia += d;
            if *l != j {
                *l = j;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    LloydRun { centroids, labels, inertia_trace: trace }
}

/// Best of `restarts` k-means++ initialised Lloyd runs by final inertia.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut dyn RngCore,
    restarts: usize,
    max_iters: usize,
) -> Result<ClusterModel> {
    if k == 0 || points.len() < k {
        return Err(Error::Invalid(format!("need at least k = {k} points, got {}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Invalid("points have mixed dimensions".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::Invalid(format!("only {} distinct points for k = {k}", distinct.len())));
    }
    let mut best: Option<ClusterModel> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, kmeans_pp_init(points, k, rng), max_iters);
        let inertia: f64 = points.iter().zip(&run.labels).map(|(p, &l)| sq_dist(p, &run.centroids[l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(ClusterModel { centroids: run.centroids, inertia, goal: None });
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn identify_goal_cluster(model: &ClusterModel, encoder: &EncoderModel, goal_observation: &Tensor) -> Result<ClusterModel> {
    let z = encoder.encode_state(goal_observation)?;
    Ok(ClusterModel { goal: Some(model.assign(z.data())?), ..model.clone() })
}

/// `count` states drawn uniformly (with replacement) from every stored state.
pub fn sample_states<'a>(set: &'a TrajectorySet, count: usize, rng: &mut dyn RngCore) -> Vec<&'a Tensor> {
    let all: Vec<&Tensor> = set.states().collect();
    if all.is_empty() {
        return Vec::new();
    }
    (0..count).map(|_| all[rng.gen_range(0..all.len())]).collect()
}

/// Embeds observations in chunks to bound tape size.
pub fn embed_all(encoder: &EncoderModel, observations: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(observations.len());
    for chunk in observations.chunks(256) {
        let z = encoder.encode_batch(chunk)?;
        out.extend((0..z.rows()).map(|r| z.row(r).to_vec()));
    }
    Ok(out)
}

/// Projection onto the top two principal components (power iteration with
/// deflation; each axis signed so its largest loading is positive).
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    if points.is_empty() {
        return Vec::new();
    }
    let d = points[0].len();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += p[i] * p[j] / n;
            }
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for a in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i + a) % 7) as f64 * 0.1).collect();
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..d).map(|i| cov[i].iter().zip(&v).map(|(c, x)| c * x).sum()).collect();
            for ax in &axes {
                let dot: f64 = w.iter().zip(ax).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(ax).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            v = w.into_iter().map(|x| x / norm).collect();
        }
        let lead = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        axes.push(v);
    }
    centered
        .iter()
        .map(|p| {
            let proj = |ax: &Vec<f64>| p.iter().zip(ax).map(|(x, y)| x * y).sum::<f64>();
            [proj(&axes[0]), proj(&axes[1])]
        })
        .collect()
}

/// One CSV row per state: raw coordinates, cluster id, 2-D projection.
pub fn write_cluster_csv(
    path: impl AsRef<Path>,
    coord_names: &[&str],
    coords: &[Vec<f64>],
    labels: &[usize],
    projection: &[[f64; 2]],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{},cluster,pc1,pc2", coord_names.join(","))?;
    for ((c, l), p) in coords.iter().zip(labels).zip(projection) {
        let cs: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{},{l},{},{}", cs.join(","), p[0], p[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[(f64, f64)]) -> Vec<Vec<f64>> {
        v.iter().map(|&(a, b)| vec![a, b]).collect()
    }

    #[test]
    fn four_points_two_clusters() {
        let p = pts(&[(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)]);
        let m = kmeans_fit(&p, 2, &mut ChaCha8Rng::seed_from_u64(0), 10, 100).unwrap();
        let mut c = m.centroids.clone();
        c.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((m.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_distinct_points_has_zero_inertia() {
        let p = pts(&[(1.0, 2.0), (3.0, 4.0), (1.0, 2.0), (5.0, 0.0)]);
        let m = kmeans_fit(&p, 3, &mut ChaCha8Rng::seed_from_u64(1), 10, 100).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(kmeans_fit(&p, 4, &mut ChaCha8Rng::seed_from_u64(1), 10, 100).is_err());
    }

    #[test]
    fn single_cluster_is_mean() {
        let p = pts(&[(1.0, 2.0), (3.0, 6.0), (5.0, 1.0)]);
        let m = kmeans_fit(&p, 1, &mut ChaCha8Rng::seed_from_u64(2), 3, 100).unwrap();
        assert_eq!(m.centroids, vec![vec![3.0, 3.0]]);
    }

    #[test]
    fn assignment_rules() {
        let m = ClusterModel {
            centroids: vec![vec![5.0, 5.0], vec![0.0, 1.0], vec![9.0, 9.0], vec![0.0, -1.0]],
            inertia: 0.0,
            goal: None,
        };
        assert_eq!(m.assign(&[9.0, 9.0]).unwrap(), 2);
        assert_eq!(m.assign(&[0.0, 0.0]).unwrap(), 1);
        assert!(m.assign(&[0.0]).is_err());
        assert!(m.goal_cluster().is_err());
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans_fit(&pts(&[(0.0, 0.0)]), 2, &mut ChaCha8Rng::seed_from_u64(0), 1, 10).is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let p: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 0.1 * ((i * 7) % 5) as f64, 2.0 * i as f64]).collect();
        let proj = pca_2d(&p);
        let xs: Vec<f64> = proj.iter().map(|q| q[0]).collect();
        // first component is monotone in i
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let m = ClusterModel { centroids: vec![vec![1.0, 2.0], vec![3.0, 4.5]], inertia: 2.5, goal: Some(1) };
        m.save(&path).unwrap();
        assert_eq!(ClusterModel::load(&path).unwrap(), m);
    }
}
