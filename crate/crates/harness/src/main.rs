//! `duet` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use duet_core::objectives::ObjectiveKind;
use duet_core::probe::FeatureTap;

use duet_harness::ablate;
use duet_harness::checkpoint::Checkpoint;
use duet_harness::eval::{evaluate_task, zero_shot_task, Protocol, PrototypePolicy};
use duet_harness::reports::{export_embeddings, run_benchmark};
use duet_harness::synthgen::{generate_corpus, GeneratorConfig};
use duet_harness::tasks::TaskManifest;
use duet_harness::train::{pretrain, TrainConfig};

#[derive(Parser)]
#[command(name = "duet", about = "Dual-encoder pre-training and transfer evaluation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic reference corpus.
    Generate(GenerateArgs),
    /// Pre-train one objective on manifest assemblies.
    Pretrain(PretrainArgs),
    /// Zero-shot evaluation of a checkpoint on one task.
    Zeroshot(ZeroshotArgs),
    /// Few-shot linear-probe evaluation.
    Probe(ProbeArgs),
    /// Cross-product benchmark over checkpoints, tasks, and protocols.
    Benchmark(BenchmarkArgs),
    /// Ablation studies.
    Ablate(AblateArgs),
    /// Export per-sample embeddings plus prototypes for visualization.
    ExportEmbeddings(ExportArgs),
}

fn out_root() -> PathBuf {
    std::env::var_os("DUET_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| out_root().join(default_name))
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML generator config; defaults apply for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// TOML training config; missing fields take the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pre-training manifests (repeatable; later manifests are merged).
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
    /// Start from the desk profile instead of the full-scale defaults.
    #[arg(long, default_value_t = true)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: PathBuf,
    /// Resolve every class from text prompts (disease-name path).
    #[arg(long)]
    prompts_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Checkpoints as label=path pairs (repeatable).
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<String>,
    #[arg(long = "task", required = true)]
    tasks: Vec<PathBuf>,
    /// Protocols: zero_shot and/or probeK (comma separated).
    #[arg(long, default_value = "zero_shot,probe16")]
    protocols: String,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// One of: feature_tap, projections, lambda_sweep, data_scaling.
    #[arg(long)]
    ablation: String,
    /// Checkpoints (feature_tap) as label=path pairs.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Training config (projections / lambda_sweep / data_scaling).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifests; for data_scaling, repeat groups separated by commas.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value = "0,0.1,1,10")]
    lambdas: String,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// pre_projection or projected.
    #[arg(long, default_value = "pre_projection")]
    tap: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_protocols(spec: &str) -> Result<Vec<Protocol>> {
    spec.split(',')
        .map(|p| {
            let p = p.trim();
            if p == "zero_shot" || p == "zeroshot" {
                Ok(Protocol::ZeroShot)
            } else if let Some(k) = p.strip_prefix("probe") {
                Ok(Protocol::Probe(k.parse().context("probe shot count")?))
            } else {
                bail!("unknown protocol '{p}'")
            }
        })
        .collect()
}

fn parse_tap(spec: &str) -> Result<FeatureTap> {
    match spec {
        "pre_projection" | "features" => Ok(FeatureTap::PreProjection),
        "projected" => Ok(FeatureTap::Projected),
        other => bail!("unknown feature tap '{other}'"),
    }
}

fn load_checkpoints(specs: &[String]) -> Result<Vec<(String, Checkpoint)>> {
    specs
        .iter()
        .map(|s| {
            let (label, path) = s
                .split_once('=')
                .with_context(|| format!("expected label=path, got '{s}'"))?;
            Ok((label.to_string(), Checkpoint::load(Path::new(path))?))
        })
        .collect()
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parse config {}", path.display()))
}

fn seed_list(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let mut config: GeneratorConfig = match &args.config {
                Some(p) => read_toml(p)?,
                None => GeneratorConfig::default(),
            };
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let out = resolve_out(args.out, "corpus");
            let bundle = generate_corpus(&config, &out)?;
            println!("{}", serde_json::to_string_pretty(&bundle)?);
        }
        Command::Pretrain(args) => {
            let mut config: TrainConfig = match &args.config {
                Some(p) => read_toml(p)?,
                None if args.desk => TrainConfig::desk(ObjectiveKind::Clip, 0),
                None => TrainConfig::default(),
            };
            if let Some(objective) = &args.objective {
                config.objective = ObjectiveKind::parse(objective)?;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                config.max_epochs = epochs;
            }
            if let Some(batch) = args.batch_size {
                config.batch_size = batch;
            }
            if let Some(lambda) = args.lambda {
                config.lambda = lambda;
            }
            let out = resolve_out(args.out, &format!("run_{}", config.objective.as_str()));
            let record = pretrain(&config, &args.manifests, &out)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Zeroshot(args) => {
            let ckpt = Checkpoint::load(&args.checkpoint)?;
            let task = TaskManifest::load(&args.task)?;
            let policy = if args.prompts_only {
                PrototypePolicy::PromptsOnly
            } else {
                PrototypePolicy::Auto
            };
            let (_, preds, truths) = zero_shot_task(&ckpt, &task, policy)?;
            let recalls = duet_core::metrics::per_class_recall(&preds, &truths, task.classes.len())?;
            let report = serde_json::json!({
                "task": task.name,
                "per_class_recall": recalls,
                "aca": duet_core::metrics::aca(&preds, &truths, &(0..task.classes.len()).collect::<Vec<_>>())?,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match args.out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
        }
        Command::Probe(args) => {
            let ckpt = Checkpoint::load(&args.checkpoint)?;
            let task = TaskManifest::load(&args.task)?;
            let (reports, agg) =
                evaluate_task(&ckpt, &task, Protocol::Probe(args.k), &seed_list(args.seeds))?;
            let text = serde_json::to_string_pretty(&serde_json::json!({
                "reports": reports,
                "aggregate": agg,
            }))?;
            match args.out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
        }
        Command::Benchmark(args) => {
            let checkpoints = load_checkpoints(&args.checkpoints)?;
            let tasks: Vec<TaskManifest> = args
                .tasks
                .iter()
                .map(|p| TaskManifest::load(p))
                .collect::<Result<_>>()?;
            let protocols = parse_protocols(&args.protocols)?;
            let out = resolve_out(args.out, "benchmark");
            let cells = run_benchmark(&checkpoints, &tasks, &protocols, &seed_list(args.seeds), &out)?;
            let failures = cells.iter().filter(|c| c.error.is_some()).count();
            println!(
                "wrote {} cells ({} failed) to {}",
                cells.len(),
                failures,
                out.display()
            );
        }
        Command::Ablate(args) => {
            let task = TaskManifest::load(&args.task)?;
            let out = resolve_out(args.out, "ablation");
            let seeds = seed_list(args.seeds);
            let path = match args.ablation.as_str() {
                "feature_tap" => {
                    let checkpoints = load_checkpoints(&args.checkpoints)?;
                    ablate::ablate_feature_tap(&checkpoints, &task, args.k, &seeds, &out)?
                }
                "projections" => {
                    let config: TrainConfig =
                        read_toml(args.config.as_ref().context("--config required")?)?;
                    ablate::ablate_projections(&config, &args.manifests, &task, &seeds, &out)?
                }
                "lambda_sweep" => {
                    let config: TrainConfig =
                        read_toml(args.config.as_ref().context("--config required")?)?;
                    let lambdas: Vec<f64> = args
                        .lambdas
                        .split(',')
                        .map(|s| s.trim().parse().context("lambda value"))
                        .collect::<Result<_>>()?;
                    ablate::ablate_lambda(&config, &args.manifests, &task, &lambdas, &seeds, &out)?
                }
                "data_scaling" => {
                    let config: TrainConfig =
                        read_toml(args.config.as_ref().context("--config required")?)?;
                    // growing prefixes of the manifest list, one run per prefix
                    let lists: Vec<Vec<PathBuf>> = (1..=args.manifests.len())
                        .map(|n| args.manifests[..n].to_vec())
                        .collect();
                    ablate::ablate_data_scaling(&config, &lists, &task, &seeds, &out)?
                }
                other => bail!("unknown ablation '{other}'"),
            };
            println!("wrote {}", path.display());
        }
        Command::ExportEmbeddings(args) => {
            let ckpt = Checkpoint::load(&args.checkpoint)?;
            let tap = parse_tap(&args.tap)?;
            let out = resolve_out(args.out, "embeddings.csv");
            export_embeddings(&ckpt, &args.manifest, tap, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let payload = serde_json::json!({ "error": format!("{e:#}") });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
