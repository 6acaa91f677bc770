//! Link-prediction detector: a two-layer MLP embeds each node, an inner-product
//! decoder scores every pair, and nodes touching low-scored existing edges are
//! flagged as victims.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DetectorOutput;
use crate::error::{Error, Result};
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimRule {
    /// Victim if any incident edge scores below the threshold.
    AnyIncident,
    /// Victim if every incident edge scores below the threshold.
    AllIncident,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkPredConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    /// Epochs for warm-started refits on later sanitation steps.
    pub refit_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Cap on sampled non-edge scores added to the threshold grid, as a
    /// multiple of the edge count.
    pub nonedge_sample_factor: usize,
    pub rule: VictimRule,
}

impl Default for LinkPredConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed_dim: 16,
            epochs: 200,
            refit_epochs: 20,
            learning_rate: 0.01,
            seed: 0,
            nonedge_sample_factor: 10,
            rule: VictimRule::AnyIncident,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkPredModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Positive-class weight `(N² - |E|) / |E|`.
    pub gamma: f64,
    pub tau_lp: f64,
}

/// `(N² - |E|) / |E|` with `|E|` the undirected edge count.
pub fn reweight_gamma(n: usize, num_edges: usize) -> f64 {
    let n2 = (n * n) as f64;
    (n2 - num_edges as f64) / num_edges as f64
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LinkPredModel {
    fn init(input_dim: usize, cfg: &LinkPredConfig, gamma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut gauss = |rows: usize, cols: usize| {
            let scale = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
        };
        let w1 = gauss(input_dim, cfg.hidden);
        let w2 = gauss(cfg.hidden, cfg.embed_dim);
        Self {
            w1,
            b1: Array1::zeros(cfg.hidden),
            w2,
            b2: Array1::zeros(cfg.embed_dim),
            gamma,
            tau_lp: 0.5,
        }
    }

    fn embed(&self, input: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let pre = input.dot(&self.w1) + &self.b1;
        let h1 = pre.mapv(|v| v.max(0.0));
        let h2 = h1.dot(&self.w2) + &self.b2;
        (pre, h1, h2)
    }

    /// `H3 = sigmoid(H2 H2ᵀ)`.
    pub fn scores(&self, input: &Array2<f64>) -> Array2<f64> {
        let (_, _, h2) = self.embed(input);
        h2.dot(&h2.t()).mapv(sigmoid)
    }

    /// Mean reweighted BCE over ordered off-diagonal pairs.
    fn loss_and_grads(&self, input: &Array2<f64>, a: &Array2<f64>) -> (f64, [Array2<f64>; 2], [Array1<f64>; 2]) {
        let n = a.nrows();
        let (pre, h1, h2) = self.embed(input);
        let logits = h2.dot(&h2.t());
        let norm = (n * (n - 1)).max(1) as f64;
        let mut loss = 0.0;
        let mut g = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let x = logits[[i, j]];
                let y = a[[i, j]];
                // ln σ(x) = -softplus(-x), ln(1-σ(x)) = -softplus(x)
                let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                loss += self.gamma * y * softplus(-x) + (1.0 - y) * softplus(x);
                let s = sigmoid(x);
                g[[i, j]] = (-self.gamma * y * (1.0 - s) + (1.0 - y) * s) / norm;
            }
        }
        let g_h2 = (&g + &g.t()).dot(&h2);
        let gw2 = h1.t().dot(&g_h2);
        let gb2 = g_h2.sum_axis(Axis(0));
        let mut g_h1 = g_h2.dot(&self.w2.t());
        ndarray::Zip::from(&mut g_h1).and(&pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let gw1 = input.t().dot(&g_h1);
        let gb1 = g_h1.sum_axis(Axis(0));
        (loss / norm, [gw1, gw2], [gb1, gb2])
    }

    fn fit(&mut self, input: &Array2<f64>, a: &Array2<f64>, epochs: usize, lr: f64) -> Result<()> {
        let mut ow1 = Adam::new(self.w1.raw_dim(), lr, 0.0);
        let mut ow2 = Adam::new(self.w2.raw_dim(), lr, 0.0);
        let mut ob1 = Adam::new(self.b1.raw_dim(), lr, 0.0);
        let mut ob2 = Adam::new(self.b2.raw_dim(), lr, 0.0);
        for _ in 0..epochs {
            let (loss, [gw1, gw2], [gb1, gb2]) = self.loss_and_grads(input, a);
            if !loss.is_finite() {
                return Err(Error::NonFinite("link prediction loss"));
            }
            ow1.step(&mut self.w1, &gw1);
            ow2.step(&mut self.w2, &gw2);
            ob1.step(&mut self.b1, &gb1);
            ob2.step(&mut self.b2, &gb2);
        }
        Ok(())
    }

    /// Warm-started refit on a modified graph; also recomputes `τ_lp`.
    pub fn refit(&mut self, input: &Array2<f64>, a: &Array2<f64>, cfg: &LinkPredConfig) -> Result<Array2<f64>> {
        self.gamma = reweight_gamma(a.nrows(), edge_count(a).max(1));
        self.fit(input, a, cfg.refit_epochs, cfg.learning_rate)?;
        let h3 = self.scores(input);
        self.tau_lp = gmean_threshold(&h3, a, cfg.nonedge_sample_factor, cfg.seed).tau;
        Ok(h3)
    }
}

fn edge_count(a: &Array2<f64>) -> usize {
    (a.sum() / 2.0).round() as usize
}

/// Trains the scorer on `input` (node embeddings, optionally concatenated with
/// reduced attributes) against adjacency `a`, then picks `τ_lp` by G-mean.
pub fn linkpred_train(input: &Array2<f64>, a: &Array2<f64>, cfg: &LinkPredConfig) -> Result<LinkPredModel> {
    let num_edges = edge_count(a);
    if num_edges == 0 {
        return Err(Error::InvalidConfig("link prediction needs at least one edge".into()));
    }
    let gamma = reweight_gamma(a.nrows(), num_edges);
    let mut model = LinkPredModel::init(input.ncols(), cfg, gamma);
    model.fit(input, a, cfg.epochs, cfg.learning_rate)?;
    let h3 = model.scores(input);
    model.tau_lp = gmean_threshold(&h3, a, cfg.nonedge_sample_factor, cfg.seed).tau;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GMeanThreshold {
    pub tau: f64,
    pub gmean: f64,
    pub degenerate: bool,
}

/// G-mean `sqrt(TPR · TNR)` of the rule "predict edge iff score ≥ τ".
pub fn gmean_at(edge_scores: &[f64], nonedge_scores: &[f64], tau: f64) -> f64 {
    let tp = edge_scores.iter().filter(|&&s| s >= tau).count() as f64;
    let tn = nonedge_scores.iter().filter(|&&s| s < tau).count() as f64;
    let tpr = if edge_scores.is_empty() { 0.0 } else { tp / edge_scores.len() as f64 };
    let tnr = if nonedge_scores.is_empty() { 0.0 } else { tn / nonedge_scores.len() as f64 };
    (tpr * tnr).sqrt()
}

/// Edge and non-edge scores from the upper triangle.
pub fn split_scores(h3: &Array2<f64>, a: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows();
    let mut edges = Vec::new();
    let mut non = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a[[i, j]] != 0.0 {
                edges.push(h3[[i, j]]);
            } else {
                non.push(h3[[i, j]]);
            }
        }
    }
    (edges, non)
}

/// Candidate thresholds: unique edge scores plus up to
/// `sample_factor · |E|` sampled non-edge scores, ascending.
pub fn threshold_candidates(edges: &[f64], non: &[f64], sample_factor: usize, seed: u64) -> Vec<f64> {
    let mut cands: Vec<f64> = edges.to_vec();
    let cap = sample_factor * edges.len();
    if non.len() <= cap {
        cands.extend_from_slice(non);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cands.extend(sample(&mut rng, non.len(), cap).into_iter().map(|i| non[i]));
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands
}

/// Threshold maximizing G-mean over the candidate grid. The returned value is
/// the midpoint between the best candidate and the next lower observed score,
/// which classifies every pair exactly as the best candidate does.
pub fn gmean_threshold(h3: &Array2<f64>, a: &Array2<f64>, sample_factor: usize, seed: u64) -> GMeanThreshold {
    let (mut edges, mut non) = split_scores(h3, a);
    let cands = threshold_candidates(&edges, &non, sample_factor, seed);
    edges.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let (ne, nn) = (edges.len() as f64, non.len() as f64);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &c in &cands {
        let tp = edges.len() - edges.partition_point(|&s| s < c);
        let tn = non.partition_point(|&s| s < c);
        let tpr = if ne > 0.0 { tp as f64 / ne } else { 0.0 };
        let tnr = if nn > 0.0 { tn as f64 / nn } else { 0.0 };
        let g = (tpr * tnr).sqrt();
        if g > best.0 {
            best = (g, c);
        }
    }
    let (gmean, c) = best;
    // largest observed score strictly below the winning candidate
    let below = |v: &[f64]| {
        let k = v.partition_point(|&s| s < c);
        if k > 0 { Some(v[k - 1]) } else { None }
    };
    let prev = match (below(&edges), below(&non)) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    };
    match prev {
        Some(p) if gmean > 0.0 => GMeanThreshold { tau: 0.5 * (p + c), gmean, degenerate: false },
        _ => GMeanThreshold { tau: c, gmean: gmean.max(0.0), degenerate: true },
    }
}

/// Flags victims from pair scores: each node's score is its minimum incident
/// edge score (`+∞` for isolated nodes).
pub fn linkpred_detect(h3: &Array2<f64>, a: &Array2<f64>, tau_lp: f64, rule: VictimRule) -> DetectorOutput {
    let n = a.nrows();
    let mut scores = vec![f64::INFINITY; n];
    let mut is_victim = vec![false; n];
    for i in 0..n {
        let mut deg = 0usize;
        let mut low = 0usize;
        for j in 0..n {
            if a[[i, j]] != 0.0 {
                deg += 1;
                scores[i] = scores[i].min(h3[[i, j]]);
                if h3[[i, j]] < tau_lp {
                    low += 1;
                }
            }
        }
        is_victim[i] = match rule {
            VictimRule::AnyIncident => low > 0,
            VictimRule::AllIncident => deg > 0 && low == deg,
        };
    }
    DetectorOutput { scores, is_victim }
}
