//! Synthetic stochastic-block-model graphs with Gaussian class features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBundle, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Distance of each class mean from the origin along its own axis.
    pub feature_signal: f64,
    pub feature_noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n: 200,
            num_classes: 2,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 16,
            feature_signal: 1.0,
            feature_noise: 1.0,
            train_frac: 0.1,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

/// Symmetric Erdős–Rényi adjacency.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// Random train/val/test split with the given fractions; the rest is test.
pub fn random_split(n: usize, train_frac: f64, val_frac: f64, rng: &mut impl Rng) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * train_frac).round() as usize).max(1);
    let n_val = ((n as f64 * val_frac).round() as usize).max(1);
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Split::new(train, val, test)
}

pub fn generate(cfg: &SbmConfig) -> Result<GraphBundle> {
    if cfg.num_classes == 0 || cfg.n < cfg.num_classes {
        return Err(Error::InvalidConfig("need n >= num_classes >= 1".into()));
    }
    if cfg.feature_dim < cfg.num_classes {
        return Err(Error::InvalidConfig("feature_dim must be >= num_classes".into()));
    }
    if cfg.train_frac + cfg.val_frac >= 1.0 {
        return Err(Error::InvalidConfig("train_frac + val_frac must be < 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    // contiguous equal-size blocks
    let labels: Vec<usize> = (0..n).map(|i| i * cfg.num_classes / n).collect();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    let mut x = Array2::zeros((n, cfg.feature_dim));
    for i in 0..n {
        for k in 0..cfg.feature_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[[i, k]] = cfg.feature_noise * z;
        }
        x[[i, labels[i]]] += cfg.feature_signal;
    }
    let split = random_split(n, cfg.train_frac, cfg.val_frac, &mut rng);
    GraphBundle::new(a, Some(x), Some(labels), cfg.num_classes, split)
}
