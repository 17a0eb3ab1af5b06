//! Central finite-difference oracle for analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates checked (all of them when the set is smaller).
    pub samples: usize,
    /// Magnitude floor in the relative-error denominator, so that
    /// near-zero gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, samples: 100, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of `loss_fn` over a
/// random subsample of coordinates.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&ParameterSet) -> f64,
    params: &ParameterSet,
    analytic: &ParameterSet,
    config: GradCheckConfig,
) -> GradCheckReport {
    let mut coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    coords.shuffle(&mut rng);
    coords.truncate(config.samples);
    coords.sort();

    let mut work = params.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for (name, i) in coords {
        let orig = params.get(&name).expect("coordinate from params").data()[i];
        work.get_mut(&name).expect("same names").data_mut()[i] = orig + config.step;
        let up = loss_fn(&work);
        work.get_mut(&name).expect("same names").data_mut()[i] = orig - config.step;
        let down = loss_fn(&work);
        work.get_mut(&name).expect("same names").data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * config.step);
        let a = analytic.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
        let denom = a.abs().max(numeric.abs()).max(config.floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some(Coordinate { param: name, index: i, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParameterSet::default();
        p.insert("w", Tensor::vector((0..150).map(|i| i as f64 * 0.01 - 0.7).collect()));
        let loss = |p: &ParameterSet| p.get("w").unwrap().norm_sq();
        let analytic = p.get("w").unwrap().map(|x| 2.0 * x);
        let mut g = ParameterSet::default();
        g.insert("w", analytic);
        let r = finite_diff_check(loss, &p, &g, GradCheckConfig::default());
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut p = ParameterSet::default();
        p.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let loss = |p: &ParameterSet| {
            let mut g = Graph::new();
            let w = g.param_from(p, "w").unwrap();
            let s = g.square(w);
            let l = g.sum(s);
            g.value(l).item()
        };
        let mut wrong = ParameterSet::default();
        wrong.insert("w", Tensor::vector(vec![2.0, 5.0]));
        let r = finite_diff_check(loss, &p, &wrong, GradCheckConfig::default());
        assert!(!r.passes(1e-4));
        assert_eq!(r.worst.unwrap().index, 1);
    }
}
