use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use graphsan::bundle_io::{load_bundle, load_poison, poison_path, save_bundle, save_poison, write_json};
use graphsan::experiment::{run_experiment, ExperimentSpec};
use graphsan::gnn::TrainConfig;
use graphsan::metagrad::MetaMode;
use graphsan::metrics::{evaluate_defense, set_metrics};
use graphsan::poison::{mettack_like, random_attack, AttackConfig};
use graphsan::sanitize::{budget_from_ratio, load_result, sanitize, save_result, Method, SanitizerConfig};
use graphsan::sbm::{generate, SbmConfig};

const RUN_FILE: &str = "run.json";

#[derive(Parser, Serialize)]
#[command(name = "graphsan", version, about = "Detect and delete adversarial edges in poisoned graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Write a synthetic two-block SBM bundle.
    Sbm(SbmArgs),
    /// Poison a bundle; writes the poisoned bundle and poison.json.
    Poison(PoisonArgs),
    /// Sanitize a poisoned bundle; writes the sanitized bundle, result.json and trace.csv.
    Sanitize(SanitizeArgs),
    /// ESR, F1 and CR of a sanitation result against a poison record.
    Metrics(MetricsArgs),
    /// Mean GNN accuracy before and after sanitation.
    Evaluate(EvaluateArgs),
    /// Run an experiment spec.
    Experiment(ExperimentArgs),
}

#[derive(clap::Args, Serialize)]
struct SbmArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.2)]
    p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    feature_signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum AttackKind {
    Mettack,
    Random,
}

#[derive(clap::Args, Serialize)]
struct PoisonArgs {
    bundle: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    power: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AttackKind::Mettack)]
    attack: AttackKind,
    /// Attack the training labels instead of self-training pseudo-labels.
    #[arg(long)]
    no_self_training: bool,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(clap::Args, Serialize, Clone, Copy)]
struct TrainArgs {
    /// Inner training epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(clap::Args, Serialize)]
struct SanitizeArgs {
    bundle: PathBuf,
    /// cld, lp, gasoline-d, jaccard or lp-only.
    #[arg(long, value_parser = parse_method)]
    method: String,
    #[arg(long, default_value_t = 0.1)]
    budget_ratio: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 0.6)]
    tau: f64,
    #[arg(long, default_value_t = 1e-4)]
    eta: f64,
    /// Keep the validation weight at 1 for every step.
    #[arg(long)]
    no_adaptive_lambda: bool,
    /// Use every validation and test node in the outer loss.
    #[arg(long)]
    no_normal_focus: bool,
    /// Ignore node attributes in detectors and the smoother.
    #[arg(long)]
    no_attributes: bool,
    /// Unroll this many inner steps in the meta-gradient; 0 is first order.
    #[arg(long, default_value_t = 0)]
    unroll: usize,
    /// Fixed similarity threshold for `jaccard` instead of the budget.
    #[arg(long)]
    jaccard_threshold: Option<f64>,
    #[command(flatten)]
    train: TrainArgs,
}

fn parse_method(s: &str) -> std::result::Result<String, String> {
    match Method::parse(s) {
        Some(_) => Ok(s.to_string()),
        None => Err(format!("unknown method `{s}`; expected cld, lp, gasoline-d, jaccard or lp-only")),
    }
}

#[derive(clap::Args, Serialize)]
struct MetricsArgs {
    poison: PathBuf,
    result: PathBuf,
}

#[derive(clap::Args, Serialize)]
struct EvaluateArgs {
    /// Poisoned bundle.
    bundle: PathBuf,
    /// Sanitized bundle.
    sanitized: PathBuf,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Poison record; defaults to the poisoned bundle's poison.json if present.
    #[arg(long)]
    poison: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(clap::Args, Serialize)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Override the spec's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

fn echo(cli: &Cli) -> serde_json::Value {
    serde_json::to_value(cli).expect("arguments serialize")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let meta = echo(&cli);
    match &cli.command {
        Command::Sbm(a) => cmd_sbm(a, meta),
        Command::Poison(a) => cmd_poison(a, meta),
        Command::Sanitize(a) => cmd_sanitize(a, meta),
        Command::Metrics(a) => cmd_metrics(a, meta),
        Command::Evaluate(a) => cmd_evaluate(a, meta),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_sbm(a: &SbmArgs, meta: serde_json::Value) -> Result<()> {
    let cfg = SbmConfig {
        n: a.n,
        num_classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        feature_dim: a.feature_dim,
        feature_signal: a.feature_signal,
        seed: a.seed,
        ..SbmConfig::default()
    };
    let bundle = generate(&cfg)?;
    save_bundle(&bundle, &a.out)?;
    write_json(&a.out.join(RUN_FILE), &json!({ "args": meta, "config": cfg }))?;
    eprintln!("wrote {} nodes, {} edges to {}", bundle.n(), bundle.num_edges(), a.out.display());
    Ok(())
}

fn cmd_poison(a: &PoisonArgs, meta: serde_json::Value) -> Result<()> {
    let clean = load_bundle(&a.bundle).with_context(|| format!("loading {}", a.bundle.display()))?;
    let cfg = AttackConfig {
        power: a.power,
        self_training: !a.no_self_training,
        seed: a.seed,
        train: a.train.config(a.seed),
        ..AttackConfig::default()
    };
    let attack = match a.attack {
        AttackKind::Mettack => mettack_like(&clean, &cfg)?,
        AttackKind::Random => random_attack(&clean, &cfg)?,
    };
    save_bundle(&attack.poisoned, &a.out)?;
    save_poison(&attack.record, poison_path(&a.out))?;
    let summary = json!({
        "args": meta,
        "config": cfg,
        "budget": cfg.budget(clean.num_edges()),
        "inserted": attack.record.inserted.len(),
        "deleted": attack.record.deleted.len(),
    });
    write_json(&a.out.join(RUN_FILE), &summary)?;
    print_json(&summary)
}

fn cmd_sanitize(a: &SanitizeArgs, meta: serde_json::Value) -> Result<()> {
    let poisoned = load_bundle(&a.bundle).with_context(|| format!("loading {}", a.bundle.display()))?;
    let method = Method::parse(&a.method).expect("validated by clap");
    let budget = budget_from_ratio(a.budget_ratio, poisoned.num_edges());
    let cfg = SanitizerConfig {
        method,
        budget,
        temperature: a.temperature,
        beta: a.beta,
        tau: a.tau,
        eta: a.eta,
        train: a.train.config(a.seed),
        meta_mode: if a.unroll == 0 { MetaMode::FirstOrder } else { MetaMode::unrolled(a.unroll) },
        seed: a.seed,
        use_attributes: !a.no_attributes,
        adaptive_lambda: !a.no_adaptive_lambda,
        normal_focus: !a.no_normal_focus,
        jaccard_threshold: a.jaccard_threshold,
        ..SanitizerConfig::default()
    };
    let result = sanitize(&poisoned, &cfg)?;
    let meta = json!({ "args": meta, "config": cfg, "poisoned_edges": poisoned.num_edges() });
    save_result(&result, &a.out, meta)?;
    // carry the attack record along so the output is itself a complete bundle
    let sidecar = poison_path(&a.bundle);
    if sidecar.exists() {
        std::fs::copy(&sidecar, poison_path(&a.out)).with_context(|| format!("copying {}", sidecar.display()))?;
    }
    print_json(&json!({
        "method": method.label(),
        "budget": budget,
        "deleted": result.deleted.len(),
        "stop": result.stop,
        "out": a.out,
    }))
}

fn cmd_metrics(a: &MetricsArgs, meta: serde_json::Value) -> Result<()> {
    let record = load_poison(&a.poison).with_context(|| format!("loading {}", a.poison.display()))?;
    let result = load_result(&a.result).with_context(|| format!("loading {}", a.result.display()))?;
    let deleted = result.deleted.iter().copied().collect();
    let sets = set_metrics(&record, &deleted)?;
    let r_asb = result
        .meta
        .get("poisoned_edges")
        .and_then(|v| v.as_u64())
        .filter(|&e| e > 0)
        .map(|e| result.deleted.len() as f64 / e as f64);
    print_json(&json!({
        "esr": sets.esr,
        "f1": sets.f1,
        "cr": sets.cr,
        "r_asb": r_asb,
        "deleted": result.deleted.len(),
        "attack_edits": record.len(),
        "method": result.method.label(),
        "args": meta,
        "sanitizer": result.meta,
    }))
}

fn cmd_evaluate(a: &EvaluateArgs, meta: serde_json::Value) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let poisoned = load_bundle(&a.bundle).with_context(|| format!("loading {}", a.bundle.display()))?;
    let sanitized = load_bundle(&a.sanitized).with_context(|| format!("loading {}", a.sanitized.display()))?;
    let record_path = a.poison.clone().or_else(|| Some(poison_path(&a.bundle)).filter(|p| p.exists()));
    let record = match &record_path {
        Some(p) => Some(load_poison(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let mut report = evaluate_defense(&poisoned, &sanitized, record.as_ref(), a.seeds, &a.train.config(0))?;
    report.config = json!({ "args": meta, "train": report.config, "poison": record_path.as_deref().map(Path::to_path_buf) });
    print_json(&report)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec)?;
    if let Some(w) = a.workers {
        spec.workers = w;
    }
    let out = run_experiment(&spec)?;
    for row in &out.summary {
        println!(
            "power={} r_asb={} {:<16} esr={:.3} f1={:.3} cr={:.3} acc {:.3} -> {:.3}",
            row.power, row.r_asb, row.sanitizer, row.esr, row.f1, row.cr, row.accuracy_poisoned, row.accuracy_sanitized
        );
    }
    if let Some(s) = out.sequential_slope {
        println!("sequential slope: {s:.6}");
    }
    if let Some(r) = out.mixed_spearman {
        println!("mixed spearman: {r:.4}");
    }
    eprintln!("results in {}", spec.outputs.dir.display());
    Ok(())
}
