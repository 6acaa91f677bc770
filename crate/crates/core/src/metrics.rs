//! Sanitation quality and downstream accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{accuracy, train_inner, TrainConfig};
use crate::graph::{EdgeSet, GraphBundle, PoisonRecord};

/// Jaccard index `|S_atk ∩ S_san| / |S_atk ∪ S_san|`.
pub fn esr(s_atk: &EdgeSet, s_san: &EdgeSet) -> Result<f64> {
    if s_atk.is_empty() {
        return Err(Error::EmptyAttackSet);
    }
    let inter = s_atk.intersection_len(s_san);
    let union = s_atk.len() + s_san.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// `2 |S_atk ∩ S_san| / (|S_atk| + |S_san|)`.
pub fn f1(s_atk: &EdgeSet, s_san: &EdgeSet) -> Result<f64> {
    if s_atk.is_empty() {
        return Err(Error::EmptyAttackSet);
    }
    let inter = s_atk.intersection_len(s_san);
    Ok(2.0 * inter as f64 / (s_atk.len() + s_san.len()) as f64)
}

/// Fraction of attacker edits recovered, `|S_atk ∩ S_san| / |S_atk|`.
pub fn cr(s_atk: &EdgeSet, s_san: &EdgeSet) -> Result<f64> {
    if s_atk.is_empty() {
        return Err(Error::EmptyAttackSet);
    }
    Ok(s_atk.intersection_len(s_san) as f64 / s_atk.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub esr: f64,
    pub f1: f64,
    pub cr: f64,
}

pub fn set_metrics(record: &PoisonRecord, deleted: &EdgeSet) -> Result<SetMetrics> {
    let atk = record.flips();
    Ok(SetMetrics { esr: esr(&atk, deleted)?, f1: f1(&atk, deleted)?, cr: cr(&atk, deleted)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub esr: f64,
    pub f1: f64,
    pub cr: f64,
    /// Deletions as a fraction of the poisoned edge count.
    pub r_asb: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub seeds: usize,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Nodes accuracy is measured on: the test split, or every unlabeled node
/// when the split has no test set.
pub fn eval_nodes(bundle: &GraphBundle) -> Vec<usize> {
    if bundle.split.test.is_empty() {
        bundle.split.unlabeled(bundle.n())
    } else {
        bundle.split.test.clone()
    }
}

/// Mean test accuracy of the linear GNN over seeds `0..seeds`.
pub fn mean_accuracy(bundle: &GraphBundle, seeds: usize, cfg: &TrainConfig) -> Result<f64> {
    if seeds == 0 {
        return Err(Error::InvalidConfig("seeds must be >= 1".into()));
    }
    let truth = bundle.labels()?;
    let nodes = eval_nodes(bundle);
    let mut total = 0.0;
    for s in 0..seeds {
        let gnn = train_inner(bundle, &TrainConfig { seed: s as u64, ..*cfg })?;
        total += accuracy(&gnn.predictions(), truth, &nodes)?;
    }
    Ok(total / seeds as f64)
}

/// Accuracy before and after sanitation with identical training seeds, plus
/// set metrics against the attack record when one is given. Without a record
/// the set metrics are reported as NaN.
pub fn evaluate_defense(
    poisoned: &GraphBundle,
    sanitized: &GraphBundle,
    record: Option<&PoisonRecord>,
    seeds: usize,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if poisoned.n() != sanitized.n() {
        return Err(Error::BundleMismatch);
    }
    let deleted = deleted_edges(poisoned, sanitized)?;
    let sets = match record {
        Some(r) => set_metrics(r, &deleted)?,
        None => SetMetrics { esr: f64::NAN, f1: f64::NAN, cr: f64::NAN },
    };
    let num_edges = poisoned.num_edges();
    Ok(MetricsReport {
        esr: sets.esr,
        f1: sets.f1,
        cr: sets.cr,
        r_asb: if num_edges > 0 { deleted.len() as f64 / num_edges as f64 } else { 0.0 },
        accuracy_before: mean_accuracy(poisoned, seeds, cfg)?,
        accuracy_after: mean_accuracy(sanitized, seeds, cfg)?,
        seeds,
        config: serde_json::to_value(cfg).unwrap_or_default(),
    })
}

/// Edges of `poisoned` missing from `sanitized`; errors if `sanitized` has
/// an edge `poisoned` lacks.
pub fn deleted_edges(poisoned: &GraphBundle, sanitized: &GraphBundle) -> Result<EdgeSet> {
    let before = poisoned.edges();
    let after = sanitized.edges();
    if after.iter().any(|(u, v)| !before.contains(u, v)) {
        return Err(Error::Consistency("sanitized graph contains an edge the poisoned graph lacks".into()));
    }
    Ok(before.iter().filter(|&(u, v)| !after.contains(u, v)).collect())
}
