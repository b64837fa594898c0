//! `fairforget` command-line interface.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use fairforget::attack::{
    baseline_request, partial_attack, select_targets, whole_attack, AttackConfig, BaselineKind, DEFAULT_BUDGET,
    DEFAULT_EPSILON, DEFAULT_RESTARTS, DEFAULT_STEPS,
};
use fairforget::datasets::{partition_by_sensitive, split, write_cache, DatasetKind, SplitSpec, TabularDataset};
use fairforget::fairness::{aeod, FairnessLossKind, FairnessReport};
use fairforget::harness::{
    compare_baselines, presets, run_experiment, AttackKind, ComparisonRow, ExperimentConfig, RunOptions, Scale,
    ENV_DATA_ROOT, ENV_RESULTS_ROOT, ENV_WORKERS,
};
use fairforget::models::{read_checkpoint, write_checkpoint, ArchKind, Architecture, PretrainedModel, TrainingConfig};
use fairforget::training::{evaluate, train_on_indices, train_shard_models, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_SHARDS};
use fairforget::unlearning::{sisa_unlearn, unlearn, RequestFile, UnlearnConfig, UnlearnMethod, UnlearnRequest, DEFAULT_TAU};

/// Parser for a kebab-case enum that lists the valid names on error.
fn choice<T>(names: &'static [&'static str]) -> impl TypedValueParser<Value = T>
where
    T: DeserializeOwned + Clone + Send + Sync + 'static,
{
    PossibleValuesParser::new(names.iter().copied())
        .map(|s| serde_json::from_value(serde_json::Value::String(s)).expect("possible values are valid names"))
}

const DATASETS: &[&str] = &["oulad", "student-performance", "xapi"];
const MODELS: &[&str] = &["lr", "mlp", "mlp2"];
const METHODS: &[&str] = &["first-order", "second-order", "unrolling-sgd", "sisa"];
const LOSSES: &[&str] = &["individual", "group"];
const KINDS: &[&str] = &["whole", "partial"];
const BASELINES: &[&str] = &["rand", "rand-min", "rand-maj", "rand-un"];
const SCALES: &[&str] = &["full", "desk"];

#[derive(Parser)]
#[command(name = "fairforget", version, about = "Fairness attacks through malicious unlearning requests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw dataset and write a binary cache.
    PrepareData(PrepareArgs),
    /// Pre-train a model and write a checkpoint.
    Train(TrainArgs),
    /// Craft a malicious (or random baseline) unlearning request.
    Attack(AttackArgs),
    /// Apply an unlearning request and report the fairness change.
    Unlearn(UnlearnArgs),
    /// Report accuracy and AEOD of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run bundled or custom experiment configurations.
    Reproduce(ReproduceArgs),
    /// Print the attack-versus-baseline table of a results directory.
    Compare(CompareArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_parser = choice::<DatasetKind>(DATASETS))]
    dataset: DatasetKind,
    /// Raw file, OULAD directory or `.ffds` cache. Defaults to a cache or
    /// the raw default location under the data root.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, env = ENV_DATA_ROOT, default_value = "data")]
    data_root: PathBuf,
    /// Training fraction of the seeded split (the seed is the model's
    /// training seed).
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

impl DataArgs {
    fn load(&self) -> Result<TabularDataset> {
        let path = match &self.data {
            Some(p) => p.clone(),
            None => {
                let cache = self.data_root.join(format!("{}.ffds", self.dataset));
                if cache.is_file() {
                    cache
                } else {
                    self.data_root.join(self.dataset.default_path())
                }
            }
        };
        self.dataset
            .load(&path)
            .with_context(|| format!("loading {} from {}", self.dataset, path.display()))
    }

    fn split(&self, ds: &TabularDataset, seed: u64) -> Result<SplitSpec> {
        Ok(split(ds, self.train_fraction, seed)?)
    }
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long, value_parser = choice::<DatasetKind>(DATASETS))]
    dataset: DatasetKind,
    /// Raw file, or a directory holding the dataset's default file name.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory; the cache is written to `<out>/<dataset>.ffds`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = choice::<ArchKind>(MODELS), default_value = "lr")]
    model: ArchKind,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Defaults to the dataset's learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Pre-trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = choice::<AttackKind>(KINDS), default_value = "whole")]
    kind: AttackKind,
    /// Operator to differentiate through.
    #[arg(long, value_parser = choice::<UnlearnMethod>(&METHODS[..2]), default_value = "first-order")]
    method: UnlearnMethod,
    /// Emit a random baseline request instead of optimising one.
    #[arg(long, value_parser = choice::<BaselineKind>(BASELINES))]
    baseline: Option<BaselineKind>,
    #[arg(long, default_value = "gender")]
    attribute: String,
    #[arg(long, value_parser = choice::<FairnessLossKind>(LOSSES), default_value = "group")]
    fairness: FairnessLossKind,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output request file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UnlearnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    request: PathBuf,
    /// Overrides the method recorded in the request file.
    #[arg(long, value_parser = choice::<UnlearnMethod>(METHODS))]
    method: Option<UnlearnMethod>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SHARDS)]
    shards: usize,
    #[arg(long, default_value = "gender")]
    attribute: String,
    /// Where to write the unlearned checkpoint (single-model methods).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Restrict AEOD to one attribute; defaults to all registered.
    #[arg(long)]
    attribute: Option<String>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Figure number (2, 3, 4, 4a, 4b, 4c, 5, 5a, 5b).
    #[arg(long, group = "target")]
    figure: Option<String>,
    /// Table number (1, 4).
    #[arg(long, group = "target")]
    table: Option<String>,
    /// Custom TOML or JSON configuration.
    #[arg(long, group = "target")]
    config: Option<PathBuf>,
    /// Every bundled configuration.
    #[arg(long, group = "target")]
    all: bool,
    #[arg(long, value_parser = choice::<Scale>(SCALES), default_value = "desk")]
    scale: Scale,
    #[arg(long, env = ENV_DATA_ROOT, default_value = "data")]
    data_root: PathBuf,
    #[arg(long, env = ENV_RESULTS_ROOT, default_value = "results")]
    results_root: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = ENV_WORKERS, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// A run directory written by `reproduce`.
    #[arg(long)]
    results: PathBuf,
}

fn read_model(path: &Path) -> Result<PretrainedModel> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(read_checkpoint(BufReader::new(file))?)
}

fn write_model(path: &Path, model: &PretrainedModel) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_checkpoint(BufWriter::new(file), model)?;
    Ok(())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let path = if args.input.is_dir() && args.dataset != DatasetKind::Oulad {
        args.input.join(args.dataset.default_path())
    } else {
        args.input.clone()
    };
    let ds = args.dataset.load(&path).with_context(|| format!("loading {}", path.display()))?;
    std::fs::create_dir_all(&args.out)?;
    let out = args.out.join(format!("{}.ffds", args.dataset));
    write_cache(BufWriter::new(File::create(&out)?), &ds)?;
    print_json(&json!({
        "dataset": args.dataset,
        "rows": ds.len(),
        "features": ds.dim(),
        "sensitive": ds.sensitive_attributes().collect::<Vec<_>>(),
        "cache": out,
    }))
}

fn train(args: TrainArgs) -> Result<()> {
    let ds = args.data.load()?;
    let sp = args.data.split(&ds, args.seed)?;
    let arch = Architecture::new(args.model, ds.dim(), ds.num_classes())?;
    let cfg = TrainingConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr.unwrap_or(args.data.dataset.default_learning_rate()),
        seed: args.seed,
    };
    let (model, log) = train_on_indices(&ds, &sp.train_indices, arch, cfg)?;
    write_model(&args.out, &model)?;
    print_json(&json!({
        "model": args.model,
        "parameters": model.params.theta.len(),
        "final_loss": log.epoch_losses.last(),
        "train_accuracy": evaluate(&model.params, &ds, &sp.train_indices)?,
        "test_accuracy": evaluate(&model.params, &ds, &sp.test_indices)?,
        "checkpoint": args.out,
    }))
}

fn attack(args: AttackArgs) -> Result<()> {
    let ds = args.data.load()?;
    let pre = read_model(&args.model)?;
    let sp = args.data.split(&ds, pre.training_config.seed)?;
    let part = partition_by_sensitive(&ds, &args.attribute)?;
    let targets = select_targets(&sp, args.budget, args.seed)?;
    let cfg = AttackConfig {
        restarts: args.restarts,
        steps: args.steps,
        tau: args.tau,
        lambda: args.lambda,
        kind: args.fairness,
        budget: args.budget,
        epsilon: args.epsilon,
        seed: args.seed,
        ..AttackConfig::default()
    };
    let (request, summary) = match args.baseline {
        Some(kind) => {
            let whole = args.kind == AttackKind::Whole;
            if whole == (kind == BaselineKind::RandUn) {
                bail!("baseline {kind} does not match a {} request", args.kind.name());
            }
            let given = (!whole).then_some(targets.as_slice());
            let req = baseline_request(kind, &ds, &sp, &part, targets.len(), args.epsilon, given, args.seed)?;
            (req, json!({ "baseline": kind, "targets": targets.len() }))
        }
        None => {
            let run = if args.kind == AttackKind::Whole { whole_attack } else { partial_attack };
            let result = run(&pre, &ds, &sp, &part, &targets, &cfg, args.method)?;
            let summary = json!({
                "method": args.method,
                "targets": targets.len(),
                "best_restart": result.best_restart,
                "best_outer_loss": result.best_outer_loss,
                "executed_outer_loss": result.executed_outer_loss,
                "report": result.report,
            });
            (result.best_request, summary)
        }
    };
    RequestFile {
        request,
        method: Some(args.method),
        tau: Some(args.tau),
    }
    .write(&args.out)?;
    print_json(&summary)
}

fn run_unlearn(args: UnlearnArgs) -> Result<()> {
    let ds = args.data.load()?;
    let pre = read_model(&args.model)?;
    let sp = args.data.split(&ds, pre.training_config.seed)?;
    let part = partition_by_sensitive(&ds, &args.attribute)?;
    let file = RequestFile::read(&args.request)?;
    let req: &UnlearnRequest = &file.request;
    let method = args.method.or(file.method).unwrap_or(UnlearnMethod::FirstOrder);
    let cfg = UnlearnConfig {
        method,
        tau: args.tau.or(file.tau).unwrap_or(DEFAULT_TAU),
        shards: args.shards,
        ..UnlearnConfig::default()
    };
    let test = &sp.test_indices;
    let report = if method == UnlearnMethod::Sisa {
        if args.out.is_some() {
            bail!("SISA produces an ensemble; --out is only supported for single-model methods");
        }
        let sharded = train_shard_models(&ds, &sp, pre.params.arch, args.shards, pre.training_config)?;
        let after = sisa_unlearn(&sharded, &ds, req, &cfg)?;
        FairnessReport::compare(&sharded, &after, &ds, test, &part)?
    } else {
        let after = unlearn(&pre, &ds, &sp.train_indices, req, &cfg)?;
        let report = FairnessReport::compare(&pre.params, &after, &ds, test, &part)?;
        if let Some(out) = &args.out {
            let model = PretrainedModel {
                params: after,
                ..pre.clone()
            };
            write_model(out, &model)?;
        }
        report
    };
    print_json(&json!({ "method": method, "removed_or_modified": req.len(), "report": report }))
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let ds = args.data.load()?;
    let model = read_model(&args.model)?;
    let sp = args.data.split(&ds, model.training_config.seed)?;
    let attrs: Vec<String> = match &args.attribute {
        Some(a) => vec![a.clone()],
        None => ds.sensitive_attributes().map(str::to_string).collect(),
    };
    let mut fairness = serde_json::Map::new();
    for a in attrs {
        let part = partition_by_sensitive(&ds, &a)?;
        let value = match aeod(&model.params, &ds, &sp.test_indices, &part) {
            Ok(v) => json!(v),
            Err(e) => json!({ "error": e.to_string() }),
        };
        fairness.insert(a, value);
    }
    print_json(&json!({
        "train_accuracy": evaluate(&model.params, &ds, &sp.train_indices)?,
        "test_accuracy": evaluate(&model.params, &ds, &sp.test_indices)?,
        "aeod": fairness,
    }))
}

fn print_comparison(rows: &[ComparisonRow]) {
    for row in rows {
        let baselines: Vec<String> = row
            .baselines
            .iter()
            .map(|b| format!("{} {:.3}±{:.3}", b.series, b.mean, b.stderr))
            .collect();
        println!(
            "{:<48} attack {:.3}±{:.3} | {} | attack > max(baselines): {}",
            row.scenario,
            row.attack.mean,
            row.attack.stderr,
            baselines.join(", "),
            row.attack_dominates
        );
    }
}

fn reproduce(args: ReproduceArgs) -> Result<bool> {
    let configs = match (&args.figure, &args.table, &args.config, args.all) {
        (Some(f), ..) => presets::for_figure(f)?,
        (_, Some(t), ..) => presets::for_table(t)?,
        (_, _, Some(path), _) => vec![ExperimentConfig::load(path)?],
        (.., true) => presets::names().into_iter().map(presets::preset).collect::<Result<_, _>>()?,
        _ => bail!("choose one of --figure, --table, --config or --all"),
    };
    let opts = RunOptions {
        scale: args.scale,
        data_root: args.data_root,
        results_root: args.results_root,
        workers: args.workers,
    };
    let mut all_ok = true;
    for config in &configs {
        let summary = run_experiment(config, &opts)?;
        let total: usize = summary.records.iter().map(Vec::len).sum();
        println!(
            "{}: {} of {} repetitions succeeded; results in {}",
            config.name,
            total - summary.failures,
            total,
            summary.directory.display()
        );
        if summary.failures == total {
            all_ok = false;
            if let Some(err) = summary
                .records
                .iter()
                .flatten()
                .find_map(|r| match &r.status {
                    fairforget::harness::RepetitionStatus::Failed { error } => Some(error.clone()),
                    _ => None,
                })
            {
                eprintln!("error: every repetition failed; first error: {err}");
            }
            continue;
        }
        if config.scenarios.iter().any(|s| !s.baselines.is_empty()) {
            match compare_baselines(&summary.directory) {
                Ok(rows) => print_comparison(&rows),
                Err(e) => eprintln!("warning: {e}"),
            }
        }
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::PrepareData(a) => prepare(a)?,
        Command::Train(a) => train(a)?,
        Command::Attack(a) => attack(a)?,
        Command::Unlearn(a) => run_unlearn(a)?,
        Command::Evaluate(a) => run_evaluate(a)?,
        Command::Reproduce(a) => return reproduce(a),
        Command::Compare(a) => print_comparison(&compare_baselines(&a.results)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
