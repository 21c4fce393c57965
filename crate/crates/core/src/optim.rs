//! Adam with global-norm gradient clipping.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Epoch budget, batching and early stopping for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Share of training sentences held out for model selection.
    pub holdout_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 10,
            patience: 5,
            holdout_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

/// Splits item indices `0..n` into (training, held-out). At least one item
/// is held out whenever `n ≥ 2` and `fraction > 0`; nothing is held out for
/// smaller inputs.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if n < 2 || fraction <= 0.0 {
        return ((0..n).collect(), Vec::new());
    }
    let held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut heldout = perm[..held].to_vec();
    let mut train = perm[held..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    (train, heldout)
}

#[derive(Debug)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    moments: BTreeMap<String, (Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, mut grads: Gradients) {
        let norm = grads.global_norm();
        if norm > self.config.clip_norm {
            grads.scale(self.config.clip_norm / norm);
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::default();
        store.insert("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let mut g = Gradients::default();
            g.insert("x".into(), store.get("x").unwrap() * 2.0);
            opt.step(&mut store, g);
        }
        assert!(store.get("x").unwrap().iter().all(|v| v.abs() < 1e-2));
    }
}
