//! Deletion-only sanitizers.
//!
//! [`focused_sanitize`] runs the detect / meta-gradient / delete loop with
//! either detector; [`gasoline_d`] is the same loop without a detector.
//! [`jaccard_prune`], [`linkpred_only`] and [`ensemble`] are the simpler
//! baselines.

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bundle_io::{read_json, save_bundle, write_json};
use crate::detect::features::pca_softmax;
use crate::detect::linkpred::{linkpred_detect, linkpred_train, LinkPredConfig, LinkPredModel};
use crate::detect::{ClassDivConfig, ClassDivDetector, DetectorOutput};
use crate::error::{Error, Result};
use crate::gnn::{train_inner, TrainConfig, TrainedGnn};
use crate::graph::{apply_edits, canonical, EdgeSet, GraphBundle};
use crate::metagrad::{focus_terms, lambda_schedule, mask_gradient, select_edge, LambdaPair, MetaMode, OuterProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Focused loop with the class-divergence detector.
    ClassDiv,
    /// Focused loop with the link-prediction detector.
    LinkPred,
    /// Unfocused loop: every node is a candidate endpoint.
    GasolineD,
    Jaccard,
    LinkPredOnly,
    /// Deletions chosen from the ground-truth attack record.
    Oracle,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::ClassDiv => "cld",
            Method::LinkPred => "lp",
            Method::GasolineD => "gasoline-d",
            Method::Jaccard => "jaccard",
            Method::LinkPredOnly => "lp-only",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cld" | "classdiv" | "class_div" => Method::ClassDiv,
            "lp" | "linkpred" | "link_pred" => Method::LinkPred,
            "gasoline-d" | "gasoline_d" => Method::GasolineD,
            "jaccard" => Method::Jaccard,
            "lp-only" | "linkpred_only" | "link_pred_only" => Method::LinkPredOnly,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SanitizerConfig {
    pub method: Method,
    /// Number of deletions `B`.
    pub budget: usize,
    pub temperature: f64,
    pub beta: f64,
    pub tau: f64,
    pub eta: f64,
    pub train: TrainConfig,
    pub meta_mode: MetaMode,
    /// Seeds the inner model, the DGMM and the link scorer.
    pub seed: u64,
    /// Use the attribute matrix in the detectors and the smoother. Forced off
    /// when the bundle has no features.
    pub use_attributes: bool,
    /// `λ_val = 1 - t/B` when on, `λ_val = 1` when off.
    pub adaptive_lambda: bool,
    /// Restrict the outer loss to detected-normal nodes.
    pub normal_focus: bool,
    pub classdiv: ClassDivConfig,
    pub linkpred: LinkPredConfig,
    /// Fixed Jaccard threshold; `None` deletes exactly `budget` edges.
    pub jaccard_threshold: Option<f64>,
}

impl Default for SanitizerConfig {
    fn default() -> Self {
        Self {
            method: Method::ClassDiv,
            budget: 1,
            temperature: 2.0,
            beta: 0.3,
            tau: 0.6,
            eta: 1e-4,
            train: TrainConfig::default(),
            meta_mode: MetaMode::FirstOrder,
            seed: 0,
            use_attributes: true,
            adaptive_lambda: true,
            normal_focus: true,
            classdiv: ClassDivConfig::default(),
            linkpred: LinkPredConfig::default(),
            jaccard_threshold: None,
        }
    }
}

impl SanitizerConfig {
    pub fn new(method: Method, budget: usize) -> Self {
        Self { method, budget, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig("eta must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::OutOfRange { what: "tau must lie in (0,1)", value: self.tau });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::OutOfRange { what: "beta must lie in [0,1]", value: self.beta });
        }
        self.train.validate()
    }

    fn train_cfg(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    fn classdiv_cfg(&self) -> ClassDivConfig {
        let mut c = self.classdiv;
        c.temperature = self.temperature;
        c.beta = self.beta;
        c.tau = self.tau;
        c.dgmm.seed = self.seed;
        c
    }

    fn linkpred_cfg(&self) -> LinkPredConfig {
        LinkPredConfig { seed: self.seed, ..self.linkpred }
    }
}

/// `⌈ratio · |E|⌉`, at least 1.
pub fn budget_from_ratio(ratio: f64, num_edges: usize) -> usize {
    ((ratio * num_edges as f64).ceil() as usize).max(1)
}

/// One deletion step of the iterative sanitizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub edge: (usize, usize),
    pub gradient: f64,
    pub lambda_val: f64,
    pub num_victims: usize,
    pub outer_loss: f64,
    /// No victims were detected, so every edge was a candidate.
    pub fallback: bool,
    pub victims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    BudgetExhausted,
    /// No candidate had a positive gradient at `step`.
    NoPositiveCandidate { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanitationResult {
    pub method: Method,
    /// Deleted edges in deletion order.
    pub deleted: Vec<(usize, usize)>,
    pub trace: Vec<StepRecord>,
    pub stop: StopReason,
    pub sanitized: GraphBundle,
}

impl SanitationResult {
    pub fn deleted_set(&self) -> EdgeSet {
        self.deleted.iter().copied().collect()
    }
}

/// On-disk form of a [`SanitationResult`] without the sanitized bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub method: Method,
    pub deleted: Vec<(usize, usize)>,
    pub stop: StopReason,
    pub trace: Vec<StepRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes the sanitized bundle, `result.json` and `trace.csv` into `dir`.
/// `meta` is echoed into `result.json` verbatim.
pub fn save_result(result: &SanitationResult, dir: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
    let dir = dir.as_ref();
    save_bundle(&result.sanitized, dir)?;
    let file = ResultFile {
        method: result.method,
        deleted: result.deleted.clone(),
        stop: result.stop,
        trace: result.trace.clone(),
        meta,
    };
    write_json(&dir.join(RESULT_FILE), &file)?;
    write_trace_csv(&result.trace, dir.join(TRACE_FILE))
}

pub fn load_result(path: impl AsRef<Path>) -> Result<ResultFile> {
    read_json(path.as_ref())
}

/// `step,u,v,gradient,lambda_val,num_victims,outer_loss,fallback`.
pub fn write_trace_csv(trace: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut emit = || -> std::io::Result<()> {
        writeln!(f, "step,u,v,gradient,lambda_val,num_victims,outer_loss,fallback")?;
        for r in trace {
            writeln!(
                f,
                "{},{},{},{:?},{:?},{},{:?},{}",
                r.step, r.edge.0, r.edge.1, r.gradient, r.lambda_val, r.num_victims, r.outer_loss, r.fallback as u8
            )?;
        }
        f.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Detector state carried across steps of the focused loop.
enum Detector {
    None,
    ClassDiv(Box<ClassDivDetector>),
    LinkPred { cfg: LinkPredConfig, pca: Option<Array2<f64>>, model: Option<Box<LinkPredModel>> },
    /// Fixed victim set; used by tests and oracles.
    Fixed(Vec<bool>),
}

impl Detector {
    fn detect(&mut self, bundle: &GraphBundle, gnn: &TrainedGnn) -> Result<DetectorOutput> {
        let n = bundle.n();
        match self {
            Detector::None => Ok(DetectorOutput::all_victims(n)),
            Detector::Fixed(flags) => Ok(DetectorOutput { scores: vec![0.0; n], is_victim: flags.clone() }),
            Detector::ClassDiv(d) => d.step(bundle, gnn),
            Detector::LinkPred { cfg, pca, model } => {
                let input = linkpred_input(&gnn.logits, pca.as_ref());
                let (h3, tau) = match model {
                    None => {
                        let m = linkpred_train(&input, &bundle.adjacency, cfg)?;
                        let h3 = m.scores(&input);
                        let tau = m.tau_lp;
                        *model = Some(Box::new(m));
                        (h3, tau)
                    }
                    Some(m) => {
                        let h3 = m.refit(&input, &bundle.adjacency, cfg)?;
                        (h3, m.tau_lp)
                    }
                };
                Ok(linkpred_detect(&h3, &bundle.adjacency, tau, cfg.rule))
            }
        }
    }
}

fn linkpred_input(z: &Array2<f64>, pca: Option<&Array2<f64>>) -> Array2<f64> {
    match pca {
        Some(p) => concatenate(Axis(1), &[z.view(), p.view()]).expect("row counts agree"),
        None => z.clone(),
    }
}

fn attributes<'a>(bundle: &'a GraphBundle, cfg: &SanitizerConfig) -> Option<&'a Array2<f64>> {
    if cfg.use_attributes {
        bundle.features.as_ref()
    } else {
        None
    }
}

fn build_detector(bundle: &GraphBundle, cfg: &SanitizerConfig) -> Result<Detector> {
    let attrs = attributes(bundle, cfg);
    Ok(match cfg.method {
        Method::GasolineD => Detector::None,
        Method::ClassDiv => {
            Detector::ClassDiv(Box::new(ClassDivDetector::new(cfg.classdiv_cfg(), attrs, bundle.num_classes)?))
        }
        Method::LinkPred => {
            let pca = match attrs {
                Some(x) => Some(pca_softmax(x, bundle.num_classes.min(x.ncols()), cfg.temperature)?),
                None => None,
            };
            Detector::LinkPred { cfg: cfg.linkpred_cfg(), pca, model: None }
        }
        Method::Jaccard | Method::LinkPredOnly | Method::Oracle => {
            return Err(Error::InvalidConfig(format!("{} is not an iterative sanitizer", cfg.method.label())))
        }
    })
}

/// The detect / meta-gradient / delete loop with the configured detector.
pub fn focused_sanitize(bundle: &GraphBundle, cfg: &SanitizerConfig) -> Result<SanitationResult> {
    cfg.validate()?;
    let detector = build_detector(bundle, cfg)?;
    run_loop(bundle, cfg, detector)
}

/// The unfocused loop: all nodes are victims, so every edge is a candidate
/// and the outer loss covers every validation and test node.
pub fn gasoline_d(bundle: &GraphBundle, cfg: &SanitizerConfig) -> Result<SanitationResult> {
    let cfg = SanitizerConfig { method: Method::GasolineD, ..cfg.clone() };
    focused_sanitize(bundle, &cfg)
}

/// The focused loop with a fixed victim set at every step.
pub fn sanitize_with_victims(bundle: &GraphBundle, cfg: &SanitizerConfig, victims: &[bool]) -> Result<SanitationResult> {
    cfg.validate()?;
    run_loop(bundle, cfg, Detector::Fixed(victims.to_vec()))
}

/// Dispatches on `cfg.method`.
pub fn sanitize(bundle: &GraphBundle, cfg: &SanitizerConfig) -> Result<SanitationResult> {
    match cfg.method {
        Method::ClassDiv | Method::LinkPred | Method::GasolineD => focused_sanitize(bundle, cfg),
        Method::Jaccard => {
            cfg.validate()?;
            match cfg.jaccard_threshold {
                Some(t) => jaccard_prune(bundle, JaccardTarget::Threshold(t)),
                None => jaccard_prune(bundle, JaccardTarget::Budget(cfg.budget)),
            }
        }
        Method::LinkPredOnly => linkpred_only(bundle, cfg),
        Method::Oracle => Err(Error::InvalidConfig("oracle deletions need an attack record".into())),
    }
}

fn run_loop(bundle: &GraphBundle, cfg: &SanitizerConfig, mut detector: Detector) -> Result<SanitationResult> {
    let n = bundle.n();
    let labels = bundle.labels()?.to_vec();
    let x = bundle.gnn_features();
    let attrs = attributes(bundle, cfg);
    let eta = if attrs.is_some() { cfg.eta } else { 0.0 };
    let problem = OuterProblem::new(&x, attrs, eta, &labels, &bundle.split.train);
    let mut current = bundle.clone();
    let mut deleted = Vec::new();
    let mut trace = Vec::new();
    let mut stop = StopReason::BudgetExhausted;
    let train_cfg = cfg.train_cfg();

    for t in 0..cfg.budget {
        let gnn = train_inner(&current, &train_cfg)?;
        let out = detector.detect(&current, &gnn)?;
        let victims = out.victims();
        let fallback = victims.is_empty();
        let detected_normals = out.normal_flags();

        let lambdas = if cfg.adaptive_lambda { lambda_schedule(t, cfg.budget)? } else { LambdaPair::validation_only() };
        let pseudo = gnn.predictions();
        let all = vec![true; n];
        let loss_normals = if cfg.normal_focus { &detected_normals } else { &all };
        let terms = match focus_terms(&bundle.split.val, &bundle.split.test, &labels, &pseudo, loss_normals, lambdas) {
            Ok(terms) if terms.iter().any(|c| c.weight > 0.0) => terms,
            // every weighted focus node was flagged: fall back to the unfocused loss
            Ok(_) | Err(Error::EmptyFocus) => {
                focus_terms(&bundle.split.val, &bundle.split.test, &labels, &pseudo, &all, lambdas)?
            }
            Err(e) => return Err(e),
        };
        let outer_loss = problem.loss(&current.adjacency, &gnn.weights, &terms);
        let g = problem.meta_gradient(&current.adjacency, &gnn.weights, &terms, cfg.meta_mode)?;

        let edges = current.edges();
        let (g, candidates) = if fallback {
            (g, edges)
        } else {
            let cands: EdgeSet = edges.iter().filter(|&(u, v)| out.is_victim[u] || out.is_victim[v]).collect();
            (mask_gradient(&g, &detected_normals), cands)
        };
        let Some(((u, v), gradient)) = select_edge(&g, &candidates) else {
            stop = StopReason::NoPositiveCandidate { step: t };
            break;
        };
        current.adjacency[[u, v]] = 0.0;
        current.adjacency[[v, u]] = 0.0;
        deleted.push((u, v));
        trace.push(StepRecord {
            step: t,
            edge: (u, v),
            gradient,
            lambda_val: lambdas.lambda_val,
            num_victims: victims.len(),
            outer_loss,
            fallback,
            victims,
        });
    }
    Ok(SanitationResult { method: cfg.method, deleted, trace, stop, sanitized: current })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JaccardTarget {
    /// Delete every edge whose similarity is below the threshold.
    Threshold(f64),
    /// Delete the `B` least similar edges.
    Budget(usize),
}

/// Weighted Jaccard `Σ min(x, y) / Σ max(x, y)` of two nonnegative rows;
/// two all-zero rows count as identical.
pub fn jaccard_similarity(x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        lo += a.min(b);
        hi += a.max(b);
    }
    if hi > 0.0 {
        lo / hi
    } else {
        1.0
    }
}

/// Per-edge similarity after shifting every column to be nonnegative.
pub fn edge_similarities(bundle: &GraphBundle) -> Result<Vec<((usize, usize), f64)>> {
    let x = bundle.features.as_ref().ok_or(Error::MissingFeatures)?;
    let mins = x.fold_axis(Axis(0), f64::INFINITY, |&m, &v| m.min(v));
    let shifted = x - &mins.mapv(|m| m.min(0.0));
    Ok(bundle.edges().iter().map(|(u, v)| ((u, v), jaccard_similarity(shifted.row(u), shifted.row(v)))).collect())
}

/// Prunes low-similarity edges, least similar first.
pub fn jaccard_prune(bundle: &GraphBundle, target: JaccardTarget) -> Result<SanitationResult> {
    let mut sims = edge_similarities(bundle)?;
    sims.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let deleted: Vec<(usize, usize)> = match target {
        JaccardTarget::Threshold(th) => sims.iter().take_while(|(_, s)| *s < th).map(|(e, _)| *e).collect(),
        JaccardTarget::Budget(b) => sims.iter().take(b).map(|(e, _)| *e).collect(),
    };
    finish_static(bundle, Method::Jaccard, deleted)
}

/// Trains the link scorer once on the poisoned graph and deletes the
/// `budget` lowest-scored edges.
pub fn linkpred_only(bundle: &GraphBundle, cfg: &SanitizerConfig) -> Result<SanitationResult> {
    cfg.validate()?;
    let gnn = train_inner(bundle, &cfg.train_cfg())?;
    let pca = match attributes(bundle, cfg) {
        Some(x) => Some(pca_softmax(x, bundle.num_classes.min(x.ncols()), cfg.temperature)?),
        None => None,
    };
    let input = linkpred_input(&gnn.logits, pca.as_ref());
    let model = linkpred_train(&input, &bundle.adjacency, &cfg.linkpred_cfg())?;
    let h3 = model.scores(&input);
    let mut scored: Vec<((usize, usize), f64)> = bundle.edges().iter().map(|(u, v)| ((u, v), h3[[u, v]])).collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let deleted = scored.into_iter().take(cfg.budget).map(|(e, _)| e).collect();
    finish_static(bundle, Method::LinkPredOnly, deleted)
}

fn finish_static(bundle: &GraphBundle, method: Method, deleted: Vec<(usize, usize)>) -> Result<SanitationResult> {
    let set: EdgeSet = deleted.iter().copied().collect();
    let a = apply_edits(&bundle.adjacency, &set, &EdgeSet::new())?;
    Ok(SanitationResult {
        method,
        deleted,
        trace: Vec::new(),
        stop: StopReason::BudgetExhausted,
        sanitized: bundle.with_adjacency(a),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Union,
    Intersection,
}

/// Combines two sanitations of `poisoned`. Deletion order follows `a`, then
/// the remaining edges of `b`.
pub fn ensemble(
    poisoned: &GraphBundle,
    a: &SanitationResult,
    b: &SanitationResult,
    mode: EnsembleMode,
) -> Result<SanitationResult> {
    for r in [a, b] {
        let replay = apply_edits(&poisoned.adjacency, &r.deleted_set(), &EdgeSet::new())
            .map_err(|_| Error::BundleMismatch)?;
        if replay != r.sanitized.adjacency {
            return Err(Error::BundleMismatch);
        }
    }
    let (sa, sb) = (a.deleted_set(), b.deleted_set());
    let deleted: Vec<(usize, usize)> = match mode {
        EnsembleMode::Union => a
            .deleted
            .iter()
            .copied()
            .chain(b.deleted.iter().copied().filter(|&(u, v)| !sa.contains(u, v)))
            .collect(),
        EnsembleMode::Intersection => a.deleted.iter().copied().filter(|&(u, v)| sb.contains(u, v)).collect(),
    };
    let mut out = finish_static(poisoned, a.method, deleted)?;
    if a.deleted_set() == out.deleted_set() {
        out.trace = a.trace.clone();
        out.stop = a.stop;
    }
    Ok(out)
}

/// Applies a recorded deletion sequence to `bundle`.
pub fn replay(bundle: &GraphBundle, deleted: &[(usize, usize)]) -> Result<GraphBundle> {
    let set: EdgeSet = deleted.iter().map(|&(u, v)| canonical(u, v)).collect();
    if set.len() != deleted.len() {
        return Err(Error::EditConflict("edge deleted twice".into()));
    }
    Ok(bundle.with_adjacency(apply_edits(&bundle.adjacency, &set, &EdgeSet::new())?))
}
