//! Experiment grids driven by a JSON spec.
//!
//! A spec names a dataset, an attack grid (`powers × seeds`), a list of
//! sanitizers and budget ratios, and which tables to produce. Cells run on a
//! bounded worker pool; every table is sorted by its key before writing, so
//! repeated runs give byte-identical files.
//!
//! ```json
//! {
//!   "dataset": {"kind": "sbm", "n": 200, "feature_signal": 0.5},
//!   "attack": {"method": "mettack", "powers": [0.1], "seeds": [0, 1, 2]},
//!   "sanitizers": [
//!     {"method": "cld"},
//!     {"method": "cld", "label": "cld-no-focus", "params": {"normal_focus": false}}
//!   ],
//!   "r_asb": [0.1],
//!   "outputs": {"dir": "results", "tables": ["grid", "sequential", "mixed"]}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle_io::{load_bundle, write_json};
use crate::error::{Error, Result};
use crate::gnn::TrainConfig;
use crate::graph::{apply_edits, EdgeSet, GraphBundle, PoisonRecord};
use crate::metrics::{mean_accuracy, set_metrics};
use crate::poison::{mettack_like, mixed_prune_fixture, random_attack, Attack, AttackConfig};
use crate::sanitize::{budget_from_ratio, sanitize, Method, SanitizerConfig, StopReason};
use crate::sbm::{generate, SbmConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// A fresh SBM per attack seed; the config's own seed is replaced.
    Sbm(SbmConfig),
    /// A bundle directory, relative to the spec file.
    Bundle { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Mettack,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub powers: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitizerSpec {
    pub method: String,
    /// Row name in the tables; defaults to the method label.
    #[serde(default)]
    pub label: Option<String>,
    /// Overrides for [`SanitizerConfig`] fields, e.g. `{"tau": 0.5}`.
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// Attack × budget × sanitizer: set metrics and accuracy.
    Grid,
    /// Accuracy while deleting true adversarial insertions one by one.
    Sequential,
    /// Accuracy after mixing true and normal deletions at ratio `p`.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default = "default_tables")]
    pub tables: Vec<Table>,
}

fn default_tables() -> Vec<Table> {
    vec![Table::Grid]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialSpec {
    /// Evaluate after every `stride` deletions.
    pub stride: usize,
}

impl Default for SequentialSpec {
    fn default() -> Self {
        Self { stride: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedSpec {
    pub p: Vec<f64>,
    pub repeats: usize,
}

impl Default for MixedSpec {
    fn default() -> Self {
        Self { p: (0..=10).map(|i| i as f64 / 10.0).collect(), repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub attack: AttackSpec,
    #[serde(default)]
    pub sanitizers: Vec<SanitizerSpec>,
    #[serde(default = "default_r_asb")]
    pub r_asb: Vec<f64>,
    pub outputs: OutputSpec,
    /// Training seeds per accuracy estimate.
    #[serde(default = "default_eval_seeds")]
    pub eval_seeds: usize,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sequential: SequentialSpec,
    #[serde(default)]
    pub mixed: MixedSpec,
}

fn default_r_asb() -> Vec<f64> {
    vec![0.1]
}

fn default_eval_seeds() -> usize {
    5
}

fn spec_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Spec { path: path.into(), msg: msg.into() }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            spec_err(path, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec and resolves a relative bundle path and output directory
    /// against the spec file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSpec::Bundle { path: p } = &mut spec.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if spec.outputs.dir.is_relative() {
            spec.outputs.dir = base.join(&spec.outputs.dir);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attack.powers.is_empty() {
            return Err(spec_err("attack.powers", "must not be empty"));
        }
        for (i, &p) in self.attack.powers.iter().enumerate() {
            if !(p > 0.0 && p <= 0.5) {
                return Err(spec_err(format!("attack.powers[{i}]"), format!("{p} is outside (0, 0.5]")));
            }
        }
        if self.attack.seeds.is_empty() {
            return Err(spec_err("attack.seeds", "must not be empty"));
        }
        for (i, &r) in self.r_asb.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(spec_err(format!("r_asb[{i}]"), format!("{r} is outside (0, 1]")));
            }
        }
        if self.eval_seeds == 0 {
            return Err(spec_err("eval_seeds", "must be >= 1"));
        }
        if self.outputs.tables.contains(&Table::Grid) {
            if self.sanitizers.is_empty() {
                return Err(spec_err("sanitizers", "the grid table needs at least one sanitizer"));
            }
            if self.r_asb.is_empty() {
                return Err(spec_err("r_asb", "the grid table needs at least one budget ratio"));
            }
        }
        if self.sequential.stride == 0 {
            return Err(spec_err("sequential.stride", "must be >= 1"));
        }
        for (i, &p) in self.mixed.p.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(spec_err(format!("mixed.p[{i}]"), format!("{p} is outside [0, 1]")));
            }
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, s) in self.sanitizers.iter().enumerate() {
            let cfg = sanitizer_config(s, i, 1, 0, &self.train)?;
            if cfg.method == Method::Oracle {
                return Err(spec_err(format!("sanitizers[{i}].method"), "oracle is not a sanitizer"));
            }
            if !labels.insert(s.label()) {
                return Err(spec_err(format!("sanitizers[{i}].label"), format!("duplicate label `{}`", s.label())));
            }
        }
        self.train.validate().map_err(|e| spec_err("train", e.to_string()))
    }
}

impl SanitizerSpec {
    pub fn label(&self) -> String {
        match (&self.label, Method::parse(&self.method)) {
            (Some(l), _) => l.clone(),
            (None, Some(m)) => m.label().to_string(),
            (None, None) => self.method.clone(),
        }
    }
}

/// Recursively overlays `patch` on `base`; keys missing from `base` are
/// reported with their path.
fn overlay(base: &mut Value, patch: &serde_json::Map<String, Value>, path: &str) -> Result<()> {
    let Value::Object(obj) = base else {
        return Err(spec_err(path, "not an object"));
    };
    for (k, v) in patch {
        let here = format!("{path}.{k}");
        match obj.get_mut(k) {
            None => return Err(spec_err(here, "unknown parameter")),
            Some(slot) => match (slot.is_object(), v) {
                (true, Value::Object(inner)) => overlay(slot, inner, &here)?,
                _ => *slot = v.clone(),
            },
        }
    }
    Ok(())
}

/// Sanitizer config for one grid cell: defaults, then the method, budget, run
/// seed and training settings, then the spec's `params`.
pub fn sanitizer_config(
    spec: &SanitizerSpec,
    index: usize,
    budget: usize,
    seed: u64,
    train: &TrainConfig,
) -> Result<SanitizerConfig> {
    let prefix = format!("sanitizers[{index}]");
    let method = Method::parse(&spec.method)
        .ok_or_else(|| spec_err(format!("{prefix}.method"), format!("unknown sanitizer `{}`", spec.method)))?;
    for fixed in ["method", "budget"] {
        if spec.params.contains_key(fixed) {
            return Err(spec_err(format!("{prefix}.params.{fixed}"), "set by the grid, not by params"));
        }
    }
    let base = SanitizerConfig { method, budget, seed, train: *train, ..SanitizerConfig::default() };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    overlay(&mut value, &spec.params, &format!("{prefix}.params"))?;
    let cfg: SanitizerConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| spec_err(format!("{prefix}.params.{}", e.path()), e.into_inner().to_string()))?;
    cfg.validate().map_err(|e| spec_err(format!("{prefix}.params"), e.to_string()))?;
    Ok(cfg)
}

/// Least-squares slope of `ys` on `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Ranks starting at 1; ties share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// Accuracy after deleting the first `k` true adversarial insertions, in a
/// seeded random order, for `k = 0, stride, 2·stride, …` and the full set.
pub fn sequential_pruning(
    poisoned: &GraphBundle,
    record: &PoisonRecord,
    stride: usize,
    seed: u64,
    eval_seeds: usize,
    train: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    let mut order: Vec<(usize, usize)> = record.inserted.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ks: Vec<usize> = (0..=order.len()).step_by(stride.max(1)).collect();
    if ks.last() != Some(&order.len()) {
        ks.push(order.len());
    }
    ks.into_iter()
        .map(|k| {
            let del: EdgeSet = order[..k].iter().copied().collect();
            let b = poisoned.with_adjacency(apply_edits(&poisoned.adjacency, &del, &EdgeSet::new())?);
            Ok((k, mean_accuracy(&b, eval_seeds, train)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub seed: u64,
    pub power: f64,
    pub edges_clean: usize,
    pub flips: usize,
    pub inserted: usize,
    pub accuracy_clean: f64,
    pub accuracy_poisoned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub seed: u64,
    pub power: f64,
    pub r_asb: f64,
    pub sanitizer: String,
    pub method: String,
    pub budget: usize,
    pub deleted: usize,
    pub esr: f64,
    pub f1: f64,
    pub cr: f64,
    pub accuracy_poisoned: f64,
    pub accuracy_sanitized: f64,
    /// Step of an early stop, empty when the budget was spent.
    pub stopped_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialRow {
    pub seed: u64,
    pub power: f64,
    pub deleted: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedRow {
    pub seed: u64,
    pub power: f64,
    pub p: f64,
    pub repeat: usize,
    pub budget: usize,
    pub esr: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub power: f64,
    pub r_asb: f64,
    pub sanitizer: String,
    pub runs: usize,
    pub esr: f64,
    pub f1: f64,
    pub cr: f64,
    pub accuracy_poisoned: f64,
    pub accuracy_sanitized: f64,
}

/// Trend statistics written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub spec: ExperimentSpec,
    /// Slope of accuracy per deleted adversarial edge, pooled over runs.
    pub sequential_slope: Option<f64>,
    /// Spearman correlation of `p` with the mean accuracy at each `p`.
    pub mixed_spearman: Option<f64>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub attacks: Vec<AttackRow>,
    pub grid: Vec<GridRow>,
    pub sequential: Vec<SequentialRow>,
    pub mixed: Vec<MixedRow>,
    pub summary: Vec<SummaryRow>,
    pub sequential_slope: Option<f64>,
    pub mixed_spearman: Option<f64>,
}

struct Run {
    seed: u64,
    power: f64,
    attack: Attack,
}

fn clean_bundle(dataset: &DatasetSpec, seed: u64) -> Result<GraphBundle> {
    match dataset {
        DatasetSpec::Sbm(cfg) => generate(&SbmConfig { seed, ..cfg.clone() }),
        DatasetSpec::Bundle { path } => load_bundle(path),
    }
}

fn run_attack(spec: &ExperimentSpec, seed: u64, power: f64) -> Result<(Run, AttackRow)> {
    let clean = clean_bundle(&spec.dataset, seed)?;
    let cfg = AttackConfig { power, seed, train: spec.train, ..AttackConfig::default() };
    let attack = match spec.attack.method {
        AttackMethod::Mettack => mettack_like(&clean, &cfg)?,
        AttackMethod::Random => random_attack(&clean, &cfg)?,
    };
    let row = AttackRow {
        seed,
        power,
        edges_clean: clean.num_edges(),
        flips: attack.record.len(),
        inserted: attack.record.inserted.len(),
        accuracy_clean: mean_accuracy(&clean, spec.eval_seeds, &spec.train)?,
        accuracy_poisoned: mean_accuracy(&attack.poisoned, spec.eval_seeds, &spec.train)?,
    };
    Ok((Run { seed, power, attack }, row))
}

fn grid_cell(spec: &ExperimentSpec, run: &Run, acc_poisoned: f64, r_asb: f64, index: usize) -> Result<GridRow> {
    let s = &spec.sanitizers[index];
    let poisoned = &run.attack.poisoned;
    let budget = budget_from_ratio(r_asb, poisoned.num_edges());
    let cfg = sanitizer_config(s, index, budget, run.seed, &spec.train)?;
    let result = sanitize(poisoned, &cfg)?;
    let sets = set_metrics(&run.attack.record, &result.deleted_set())?;
    Ok(GridRow {
        seed: run.seed,
        power: run.power,
        r_asb,
        sanitizer: s.label(),
        method: cfg.method.label().to_string(),
        budget,
        deleted: result.deleted.len(),
        esr: sets.esr,
        f1: sets.f1,
        cr: sets.cr,
        accuracy_poisoned: acc_poisoned,
        accuracy_sanitized: mean_accuracy(&result.sanitized, spec.eval_seeds, &spec.train)?,
        stopped_at: match result.stop {
            StopReason::BudgetExhausted => None,
            StopReason::NoPositiveCandidate { step } => Some(step),
        },
    })
}

fn mixed_cells(spec: &ExperimentSpec, run: &Run) -> Vec<(f64, usize)> {
    if run.attack.record.inserted.is_empty() {
        return Vec::new();
    }
    spec.mixed.p.iter().flat_map(|&p| (0..spec.mixed.repeats).map(move |r| (p, r))).collect()
}

/// Deletion budget for the mixed table: the number of true insertions, so
/// that `p = 1` deletes exactly the adversarial edges.
fn mixed_cell(spec: &ExperimentSpec, run: &Run, p: f64, repeat: usize) -> Result<MixedRow> {
    let record = &run.attack.record;
    let budget = record.inserted.len();
    let seed = run.seed.wrapping_mul(1_000_003).wrapping_add(repeat as u64);
    let result = mixed_prune_fixture(&run.attack.poisoned, record, p, budget, seed)?;
    Ok(MixedRow {
        seed: run.seed,
        power: run.power,
        p,
        repeat,
        budget,
        esr: set_metrics(record, &result.deleted_set())?.esr,
        accuracy: mean_accuracy(&result.sanitized, spec.eval_seeds, &spec.train)?,
    })
}

fn summarize(grid: &[GridRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, u64, String), Vec<&GridRow>> = BTreeMap::new();
    for r in grid {
        groups.entry((r.power.to_bits(), r.r_asb.to_bits(), r.sanitizer.clone())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rows| {
            let mean = |f: fn(&GridRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
            SummaryRow {
                power: rows[0].power,
                r_asb: rows[0].r_asb,
                sanitizer: rows[0].sanitizer.clone(),
                runs: rows.len(),
                esr: mean(|r| r.esr),
                f1: mean(|r| r.f1),
                cr: mean(|r| r.cr),
                accuracy_poisoned: mean(|r| r.accuracy_poisoned),
                accuracy_sanitized: mean(|r| r.accuracy_sanitized),
            }
        })
        .collect()
}

/// Runs every table of the spec in memory.
pub fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| run_in_pool(spec))
}

fn run_in_pool(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let keys: Vec<(u64, f64)> =
        spec.attack.seeds.iter().flat_map(|&s| spec.attack.powers.iter().map(move |&p| (s, p))).collect();
    let attacked: Vec<(Run, AttackRow)> =
        keys.par_iter().map(|&(s, p)| run_attack(spec, s, p)).collect::<Result<_>>()?;
    let mut out = ExperimentOutput::default();
    let tables = &spec.outputs.tables;

    if tables.contains(&Table::Grid) {
        let cells: Vec<(usize, f64, usize)> = (0..attacked.len())
            .flat_map(|a| spec.r_asb.iter().flat_map(move |&r| (0..spec.sanitizers.len()).map(move |i| (a, r, i))))
            .collect();
        out.grid = cells
            .par_iter()
            .map(|&(a, r, i)| grid_cell(spec, &attacked[a].0, attacked[a].1.accuracy_poisoned, r, i))
            .collect::<Result<_>>()?;
        out.summary = summarize(&out.grid);
    }
    if tables.contains(&Table::Sequential) {
        let per_run: Vec<Vec<SequentialRow>> = attacked
            .par_iter()
            .map(|(run, _)| {
                let trace = sequential_pruning(
                    &run.attack.poisoned,
                    &run.attack.record,
                    spec.sequential.stride,
                    run.seed,
                    spec.eval_seeds,
                    &spec.train,
                )?;
                Ok(trace
                    .into_iter()
                    .map(|(deleted, accuracy)| SequentialRow { seed: run.seed, power: run.power, deleted, accuracy })
                    .collect())
            })
            .collect::<Result<_>>()?;
        out.sequential = per_run.into_iter().flatten().collect();
        let xs: Vec<f64> = out.sequential.iter().map(|r| r.deleted as f64).collect();
        let ys: Vec<f64> = out.sequential.iter().map(|r| r.accuracy).collect();
        out.sequential_slope = (xs.len() >= 2).then(|| linear_slope(&xs, &ys));
    }
    if tables.contains(&Table::Mixed) {
        let cells: Vec<(usize, f64, usize)> = attacked
            .iter()
            .enumerate()
            .flat_map(|(a, (run, _))| mixed_cells(spec, run).into_iter().map(move |(p, r)| (a, p, r)))
            .collect();
        out.mixed = cells.par_iter().map(|&(a, p, r)| mixed_cell(spec, &attacked[a].0, p, r)).collect::<Result<_>>()?;
        out.mixed_spearman = mixed_trend(&out.mixed);
    }
    out.attacks = attacked.into_iter().map(|(_, row)| row).collect();
    sort_tables(&mut out);
    Ok(out)
}

/// Spearman of `p` against the mean accuracy at each distinct `p`.
pub fn mixed_trend(rows: &[MixedRow]) -> Option<f64> {
    let mut by_p: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by_p.entry(r.p.to_bits()).or_insert((r.p, 0.0, 0));
        e.1 += r.accuracy;
        e.2 += 1;
    }
    if by_p.len() < 2 {
        return None;
    }
    let (ps, accs): (Vec<f64>, Vec<f64>) = by_p.into_values().map(|(p, s, c)| (p, s / c as f64)).unzip();
    Some(spearman(&ps, &accs))
}

fn sort_tables(out: &mut ExperimentOutput) {
    out.attacks.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.power.total_cmp(&b.power)));
    out.grid.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.power.total_cmp(&b.power))
            .then(a.r_asb.total_cmp(&b.r_asb))
            .then(a.sanitizer.cmp(&b.sanitizer))
    });
    out.sequential.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.power.total_cmp(&b.power)).then(a.deleted.cmp(&b.deleted)));
    out.mixed.sort_by(|a, b| {
        a.seed.cmp(&b.seed).then(a.power.total_cmp(&b.power)).then(a.p.total_cmp(&b.p)).then(a.repeat.cmp(&b.repeat))
    });
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Format { file: path.to_path_buf(), line, msg: e.to_string() }
}

/// Runs the spec and writes `attacks.csv`, the requested tables,
/// `summary.csv` for the grid and `report.json` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let out = run_grid(spec)?;
    let dir = &spec.outputs.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec!["attacks.csv".to_string()];
    write_csv(&dir.join("attacks.csv"), &out.attacks)?;
    let tables = &spec.outputs.tables;
    if tables.contains(&Table::Grid) {
        write_csv(&dir.join("grid.csv"), &out.grid)?;
        write_csv(&dir.join("summary.csv"), &out.summary)?;
        files.extend(["grid.csv".into(), "summary.csv".into()]);
    }
    if tables.contains(&Table::Sequential) {
        write_csv(&dir.join("sequential.csv"), &out.sequential)?;
        files.push("sequential.csv".into());
    }
    if tables.contains(&Table::Mixed) {
        write_csv(&dir.join("mixed.csv"), &out.mixed)?;
        files.push("mixed.csv".into());
    }
    files.push("report.json".into());
    let report = Report {
        spec: spec.clone(),
        sequential_slope: out.sequential_slope,
        mixed_spearman: out.mixed_spearman,
        files,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(out)
}
