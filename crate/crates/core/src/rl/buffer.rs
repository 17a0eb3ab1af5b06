//! Rollout storage and advantage estimation.

/// Fixed-horizon transition storage for one policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub feature_size: usize,
    /// Row-major `[len, feature_size]`.
    pub features: Vec<f64>,
    /// Actions as stored floats, one row per step.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Segment ended after this step (terminal, timeout, or phase switch).
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(feature_size: usize) -> Self {
        Self { feature_size, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, features: &[f64], action: Vec<f64>, log_prob: f64, value: f64, reward: f64, done: bool) {
        debug_assert_eq!(features.len(), self.feature_size);
        self.features.extend_from_slice(features);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_size..(i + 1) * self.feature_size]
    }

    /// Marks the latest step as a segment end.
    pub fn close_last(&mut self) {
        if let Some(d) = self.dones.last_mut() {
            *d = true;
        }
    }

    /// Fills advantages and returns; `bootstrap` values the state after the last step.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) {
        let (a, r) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap, gamma, lambda);
        self.advantages = a;
        self.returns = r;
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.feature_size);
    }
}

/// `Aₜ = Σᵢ (γλ)ⁱ δₜ₊ᵢ`, `δₜ = rₜ + γ V(sₜ₊₁)(1 − doneₜ) − V(sₜ)`; returns `(advantages, advantages + values)`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Rescales to mean 0 and (population) std 1; a constant slice is only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-12 {
            *a /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_recursion() {
        // δ = (1 + 0.9·0.5 − 0.5, 0.9·0.5 − 0.5) with V(s₂) = 0.5
        let (a, r) = compute_gae(&[1.0, 0.0], &[0.5, 0.5], &[false, false], 0.5, 0.9, 0.8);
        assert!((a[1] + 0.05).abs() < 1e-12);
        assert!((a[0] - 0.914).abs() < 1e-12);
        assert!((r[0] - 1.414).abs() < 1e-12);
        // zero bootstrap: δ₁ = −0.5
        let (a, _) = compute_gae(&[1.0, 0.0], &[0.5, 0.5], &[false, false], 0.0, 0.9, 0.8);
        assert!((a[1] + 0.5).abs() < 1e-12);
        assert!((a[0] - 0.59).abs() < 1e-12);
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[true, false], 10.0, 1.0, 1.0);
        assert_eq!(a, vec![1.0, 11.0]);
    }
}

/// Scales rewards by the running standard deviation of the discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardScaler {
    gamma: f64,
    ret: f64,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub const CLIP: f64 = 10.0;

    pub fn new(gamma: f64) -> Self {
        Self { gamma, ret: 0.0, count: 0.0, mean: 0.0, m2: 0.0 }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }

    /// Updates the statistics with `reward` and returns it scaled.
    pub fn scale(&mut self, reward: f64, done: bool) -> f64 {
        self.ret = self.ret * self.gamma + reward;
        self.count += 1.0;
        let d = self.ret - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (self.ret - self.mean);
        if done {
            self.ret = 0.0;
        }
        (reward / (self.std() + 1e-8)).clamp(-Self::CLIP, Self::CLIP)
    }
}
