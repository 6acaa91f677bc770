//! Poisoned fixtures with known attacker edits.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{train_inner, TrainConfig};
use crate::graph::{apply_edits, EdgeSet, GraphBundle, PoisonRecord};
use crate::metagrad::{CeTerm, MetaMode, OuterProblem};
use crate::sanitize::{Method, SanitationResult, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Budget as a fraction of the clean edge count.
    pub power: f64,
    /// Attack the surrogate's pseudo-labels on unlabeled nodes; otherwise the
    /// true labels of the training nodes.
    pub self_training: bool,
    pub seed: u64,
    pub meta_mode: MetaMode,
    pub train: TrainConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            power: 0.1,
            self_training: true,
            seed: 0,
            meta_mode: MetaMode::FirstOrder,
            train: TrainConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power <= 0.5) {
            return Err(Error::OutOfRange { what: "attack power must lie in (0, 0.5]", value: self.power });
        }
        self.train.validate()
    }

    /// `⌈power · |E|⌉`.
    pub fn budget(&self, num_edges: usize) -> usize {
        (self.power * num_edges as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStep {
    pub step: usize,
    pub pair: (usize, usize),
    pub inserted: bool,
    pub score: f64,
    /// Attack loss before the flip and after it with the weights held fixed.
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attack {
    pub poisoned: GraphBundle,
    pub record: PoisonRecord,
    pub steps: Vec<AttackStep>,
}

/// Greedy meta-gradient attacker: each step retrains the linear GNN on the
/// current graph and flips the pair whose first-order effect on the attack
/// loss is largest, `G ⊙ (1 - 2A)`.
pub fn mettack_like(clean: &GraphBundle, cfg: &AttackConfig) -> Result<Attack> {
    cfg.validate()?;
    let n = clean.n();
    let labels = clean.labels()?.to_vec();
    let train_cfg = TrainConfig { seed: cfg.seed, ..cfg.train };
    let surrogate = train_inner(clean, &train_cfg)?;
    let pseudo = surrogate.predictions();
    let terms: Vec<CeTerm> = if cfg.self_training {
        clean
            .split
            .unlabeled(n)
            .into_iter()
            .map(|i| CeTerm { node: i, class: pseudo[i], weight: 1.0 })
            .collect()
    } else {
        clean.split.train.iter().map(|&i| CeTerm { node: i, class: labels[i], weight: 1.0 }).collect()
    };
    if terms.is_empty() {
        return Err(Error::EmptyFocus);
    }
    let x = clean.gnn_features();
    let problem = OuterProblem::new(&x, None, 0.0, &labels, &clean.split.train);
    let budget = cfg.budget(clean.num_edges());
    let mut a = clean.adjacency.clone();
    let mut flipped = vec![false; n * n];
    let mut record = PoisonRecord::default();
    let mut steps = Vec::with_capacity(budget);

    for step in 0..budget {
        let gnn = train_inner(&clean.with_adjacency(a.clone()), &train_cfg)?;
        let g = problem.meta_gradient(&a, &gnn.weights, &terms, cfg.meta_mode)?;
        let Some(((u, v), score)) = best_flip(&g, &a, &flipped) else {
            break;
        };
        let loss_before = problem.loss(&a, &gnn.weights, &terms);
        let inserted = a[[u, v]] == 0.0;
        let val = if inserted { 1.0 } else { 0.0 };
        a[[u, v]] = val;
        a[[v, u]] = val;
        flipped[u * n + v] = true;
        if inserted {
            record.inserted.insert(u, v);
        } else {
            record.deleted.insert(u, v);
        }
        let loss_after = problem.loss(&a, &gnn.weights, &terms);
        steps.push(AttackStep { step, pair: (u, v), inserted, score, loss_before, loss_after });
    }
    Ok(Attack { poisoned: clean.with_adjacency(a), record, steps })
}

/// Largest `G[u,v] (1 - 2A[u,v])` over unflipped pairs `u < v`; ties go to the
/// smallest pair.
fn best_flip(g: &Array2<f64>, a: &Array2<f64>, flipped: &[bool]) -> Option<((usize, usize), f64)> {
    let n = a.nrows();
    let mut best: Option<((usize, usize), f64)> = None;
    for u in 0..n {
        for v in (u + 1)..n {
            if flipped[u * n + v] {
                continue;
            }
            let s = g[[u, v]] * (1.0 - 2.0 * a[[u, v]]);
            if !s.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some(((u, v), s));
            }
        }
    }
    best
}

/// Flips `⌈power · |E|⌉` distinct uniformly random pairs.
pub fn random_attack(clean: &GraphBundle, cfg: &AttackConfig) -> Result<Attack> {
    cfg.validate()?;
    let n = clean.n();
    let budget = cfg.budget(clean.num_edges());
    let total = n * (n - 1) / 2;
    if budget > total {
        return Err(Error::InvalidConfig("attack budget exceeds the number of node pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut a = clean.adjacency.clone();
    let mut record = PoisonRecord::default();
    let mut steps = Vec::with_capacity(budget);
    for (step, idx) in sample(&mut rng, total, budget).into_iter().enumerate() {
        let (u, v) = pair_from_index(idx, n);
        let inserted = a[[u, v]] == 0.0;
        let val = if inserted { 1.0 } else { 0.0 };
        a[[u, v]] = val;
        a[[v, u]] = val;
        if inserted {
            record.inserted.insert(u, v);
        } else {
            record.deleted.insert(u, v);
        }
        steps.push(AttackStep { step, pair: (u, v), inserted, score: 0.0, loss_before: 0.0, loss_after: 0.0 });
    }
    Ok(Attack { poisoned: clean.with_adjacency(a), record, steps })
}

/// Maps `0..n(n-1)/2` onto upper-triangle pairs in row-major order.
fn pair_from_index(mut idx: usize, n: usize) -> (usize, usize) {
    for u in 0..n {
        let row = n - 1 - u;
        if idx < row {
            return (u, u + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("index out of range")
}

/// Deletes `⌈p·B⌉` true adversarial insertions and `B - ⌈p·B⌉` other edges,
/// both sampled uniformly.
pub fn mixed_prune_fixture(
    poisoned: &GraphBundle,
    record: &PoisonRecord,
    p: f64,
    budget: usize,
    seed: u64,
) -> Result<SanitationResult> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange { what: "p must lie in [0,1]", value: p });
    }
    let k = (p * budget as f64).ceil() as usize;
    let adversarial: Vec<(usize, usize)> = record.inserted.iter().collect();
    if k > adversarial.len() {
        return Err(Error::InsufficientAdversarialEdges { needed: k, available: adversarial.len() });
    }
    let normal: Vec<(usize, usize)> =
        poisoned.edges().iter().filter(|&(u, v)| !record.inserted.contains(u, v)).collect();
    if budget - k > normal.len() {
        return Err(Error::InvalidConfig("not enough normal edges for the requested budget".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deleted: Vec<(usize, usize)> = sample(&mut rng, adversarial.len(), k).into_iter().map(|i| adversarial[i]).collect();
    deleted.extend(sample(&mut rng, normal.len(), budget - k).into_iter().map(|i| normal[i]));
    let set: EdgeSet = deleted.iter().copied().collect();
    let a = apply_edits(&poisoned.adjacency, &set, &EdgeSet::new())?;
    Ok(SanitationResult {
        method: Method::Oracle,
        deleted,
        trace: Vec::new(),
        stop: StopReason::BudgetExhausted,
        sanitized: poisoned.with_adjacency(a),
    })
}
