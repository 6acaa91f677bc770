//! Two-layer linearized GNN: `S = softmax(Â² X W)`, no bias, no activations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, GraphBundle};
use crate::optim::Adam;

/// Inner optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 0.01, weight_decay: 5e-4, seed: 0, init_scale: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGnn {
    /// `d x C`
    pub weights: Array2<f64>,
    /// Cached `Â² X`, valid for the adjacency the model was trained on.
    pub propagated: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl TrainedGnn {
    pub fn predictions(&self) -> Vec<usize> {
        predict(&self.probs)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// `Â² X` for the given adjacency.
pub fn propagate(a: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let a_hat = normalize_adjacency(a);
    a_hat.dot(&a_hat.dot(x))
}

pub fn forward(a: &Array2<f64>, x: &Array2<f64>, w: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let logits = propagate(a, x).dot(w);
    let probs = softmax_rows(&logits);
    (logits, probs)
}

/// Argmax per row; ties go to the smallest class index.
pub fn predict(probs: &Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize], subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let hits = subset.iter().filter(|&&i| pred[i] == truth[i]).count();
    Ok(hits as f64 / subset.len() as f64)
}

/// Mean cross-entropy over `nodes` and its gradient w.r.t. `W`.
pub fn nll_and_grad(
    propagated: &Array2<f64>,
    w: &Array2<f64>,
    labels: &[usize],
    nodes: &[usize],
) -> (f64, Array2<f64>) {
    let p_sub = propagated.select(Axis(0), nodes);
    let probs = softmax_rows(&p_sub.dot(w));
    let m = nodes.len() as f64;
    let mut loss = 0.0;
    let mut resid = probs;
    for (r, &i) in nodes.iter().enumerate() {
        let y = labels[i];
        loss -= resid[[r, y]].max(1e-300).ln();
        resid[[r, y]] -= 1.0;
    }
    resid /= m;
    (loss / m, p_sub.t().dot(&resid))
}

/// Trains `W` on precomputed `Â² X` with Adam.
pub fn train_on_propagated(
    propagated: Array2<f64>,
    labels: &[usize],
    train: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainedGnn> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySubset);
    }
    let d = propagated.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Array2::from_shape_fn((d, num_classes), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        cfg.init_scale * z
    });
    let mut opt = Adam::new(w.raw_dim(), cfg.learning_rate, cfg.weight_decay);
    for _ in 0..cfg.epochs {
        let (loss, grad) = nll_and_grad(&propagated, &w, labels, train);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("inner training loss"));
        }
        opt.step(&mut w, &grad);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inner training weights"));
    }
    let logits = propagated.dot(&w);
    let probs = softmax_rows(&logits);
    Ok(TrainedGnn { weights: w, propagated, logits, probs })
}

/// Fits `W` on the bundle's training nodes.
pub fn train_inner(bundle: &GraphBundle, cfg: &TrainConfig) -> Result<TrainedGnn> {
    cfg.validate()?;
    let labels = bundle.labels()?;
    let x = bundle.gnn_features();
    let propagated = propagate(&bundle.adjacency, &x);
    train_on_propagated(propagated, labels, &bundle.split.train, bundle.num_classes, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub d: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub seed: u64,
}

/// Writes `W` as a JSON header line followed by `d` CSV rows of `C` reals.
pub fn save_weights(w: &Array2<f64>, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader { d: w.nrows(), c: w.ncols(), seed };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
    out.push('\n');
    for row in w.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Array2<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: String| Error::Format { file: path.to_path_buf(), line, msg };
    let header: CheckpointHeader = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| bad(1, e.to_string()))?;
    let mut w = Array2::zeros((header.d, header.c));
    for r in 0..header.d {
        let line = lines.next().ok_or_else(|| bad(r + 2, "missing weight row".into()))?;
        let vals: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(r + 2, format!("bad real: {e}")))?;
        if vals.len() != header.c {
            return Err(bad(r + 2, format!("expected {} columns", header.c)));
        }
        for (c, v) in vals.into_iter().enumerate() {
            w[[r, c]] = v;
        }
    }
    Ok((header, w))
}
