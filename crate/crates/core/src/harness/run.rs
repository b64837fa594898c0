//! Per-repetition pipeline and the experiment driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ExperimentConfig, Scale, Scenario};
use super::report::{aggregate, write_aggregate, write_plot_data, AggregateRow, RunManifest, AGGREGATE_FILE, MANIFEST_FILE};
use crate::attack::{
    baseline_request, partial_attack, select_targets, transfer_attack, whole_attack, BaselineKind, UnlearningTarget,
};
use crate::datasets::{partition_by_sensitive, read_cache, split, TabularDataset};
use crate::error::{Error, Result};
use crate::fairness::{aeod, FairnessReport};
use crate::models::{ArchKind, Architecture, PretrainedModel, TrainingConfig};
use crate::seeding;
use crate::training::{evaluate, train_on_indices, train_shard_models};
use crate::unlearning::{RequestFile, UnlearnMethod, UnlearnRequest};

pub const ENV_DATA_ROOT: &str = "FAIRFORGET_DATA_ROOT";
pub const ENV_RESULTS_ROOT: &str = "FAIRFORGET_RESULTS_ROOT";
pub const ENV_WORKERS: &str = "FAIRFORGET_WORKERS";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scale: Scale,
    pub data_root: PathBuf,
    pub results_root: PathBuf,
    /// Worker threads for independent repetitions; 0 uses all cores.
    pub workers: usize,
}

impl RunOptions {
    /// Options from the environment, falling back to `data/`, `results/`
    /// and all available cores.
    pub fn from_env(scale: Scale) -> Result<Self> {
        let workers = match std::env::var(ENV_WORKERS) {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{ENV_WORKERS} must be a non-negative integer, got `{v}`")))?,
            Err(_) => 0,
        };
        Ok(RunOptions {
            scale,
            data_root: std::env::var_os(ENV_DATA_ROOT).map_or_else(|| PathBuf::from("data"), PathBuf::from),
            results_root: std::env::var_os(ENV_RESULTS_ROOT).map_or_else(|| PathBuf::from("results"), PathBuf::from),
            workers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// Operator the request was optimised through.
    pub attack_method: UnlearnMethod,
    pub surrogate_model: ArchKind,
    pub transferred: bool,
    pub best_restart: usize,
    pub best_outer_loss: f64,
    pub targets: usize,
    /// Samples removed by the discretized whole request.
    pub removed: Option<usize>,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub kind: BaselineKind,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub train_size: usize,
    pub test_size: usize,
    pub pre_test_accuracy: f64,
    pub pre_aeod: f64,
    pub attack: Option<AttackOutcome>,
    pub baselines: Vec<BaselineOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RepetitionStatus {
    Ok(RepetitionResult),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub scenario: String,
    pub repetition: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RepetitionStatus,
}

impl RepetitionRecord {
    pub fn result(&self) -> Option<&RepetitionResult> {
        match &self.status {
            RepetitionStatus::Ok(r) => Some(r),
            RepetitionStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub records: Vec<Vec<RepetitionRecord>>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: usize,
}

/// Seed for repetition `r`, shared by every scenario so that baselines and
/// attacks see the same split and pre-trained model.
pub fn repetition_seed(base: u64, r: usize) -> u64 {
    seeding::derive(base, r as u64)
}

/// Location of a scenario's data: the explicit path, else a prepared cache
/// `<root>/<dataset>.ffds`, else the raw default location.
pub fn resolve_data_path(s: &Scenario, data_root: &Path) -> Result<PathBuf> {
    if let Some(p) = &s.data {
        return Ok(if p.is_absolute() { p.clone() } else { data_root.join(p) });
    }
    let cache = data_root.join(format!("{}.ffds", s.dataset));
    if cache.is_file() {
        return Ok(cache);
    }
    let kind = s.dataset_kind().ok_or_else(|| Error::Lookup {
        kind: "dataset",
        name: s.dataset.clone(),
    })?;
    Ok(data_root.join(kind.default_path()))
}

pub fn load_scenario_data(s: &Scenario, data_root: &Path) -> Result<TabularDataset> {
    let path = resolve_data_path(s, data_root)?;
    if path.extension().is_some_and(|e| e == "ffds") {
        let file = std::fs::File::open(&path)
            .map_err(|e| Error::config(format!("cannot open dataset cache {}: {e}", path.display())))?;
        return read_cache(std::io::BufReader::new(file));
    }
    match s.dataset_kind() {
        Some(kind) => kind.load(&path),
        None => Err(Error::Lookup {
            kind: "dataset",
            name: s.dataset.clone(),
        }),
    }
}

fn train(ds: &TabularDataset, train: &[usize], kind: ArchKind, cfg: TrainingConfig) -> Result<PretrainedModel> {
    let arch = Architecture::new(kind, ds.dim(), ds.num_classes())?;
    Ok(train_on_indices(ds, train, arch, cfg)?.0)
}

/// Runs one repetition of a scenario. Also returns the attack's request.
pub fn run_repetition(
    s: &Scenario,
    data: &TabularDataset,
    scale: Scale,
    seed: u64,
) -> Result<(RepetitionResult, Option<UnlearnRequest>)> {
    let ds = match s.row_cap(scale) {
        Some(rows) => data.subsample(rows, seed)?,
        None => data.clone(),
    };
    let sp = split(&ds, s.train_fraction, seed)?;
    let part = partition_by_sensitive(&ds, &s.attribute)?;
    let tcfg = TrainingConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        lr: s.learning_rate(),
        seed,
    };
    let pre = train(&ds, &sp.train_indices, s.model, tcfg)?;
    let mut result = RepetitionResult {
        train_size: sp.train_indices.len(),
        test_size: sp.test_indices.len(),
        pre_test_accuracy: evaluate(&pre.params, &ds, &sp.test_indices)?,
        pre_aeod: aeod(&pre.params, &ds, &sp.test_indices, &part)?,
        attack: None,
        baselines: Vec::new(),
    };
    if s.attack == AttackKind::None {
        return Ok((result, None));
    }

    let targets = select_targets(&sp, s.budget, seed)?;
    let acfg = s.attack_config(seed);
    let ucfg = acfg.unlearn_config(s.method);
    let sharded = if s.method == UnlearnMethod::Sisa {
        Some(train_shard_models(&ds, &sp, pre.params.arch, s.shards, tcfg)?)
    } else {
        None
    };
    let target = match &sharded {
        Some(m) => UnlearningTarget::Sharded(m),
        None => UnlearningTarget::Model {
            pre: &pre,
            method: s.method,
        },
    };

    // Non-differentiable operators and other architectures are attacked
    // through a first-order surrogate.
    let surrogate_kind = s.surrogate_model.unwrap_or(s.model);
    let surrogate = if surrogate_kind == s.model {
        None
    } else {
        Some(train(&ds, &sp.train_indices, surrogate_kind, tcfg)?)
    };
    let attack_method = s.attack_method();
    let surrogate_pre = surrogate.as_ref().unwrap_or(&pre);
    let run = match s.attack {
        AttackKind::Whole => whole_attack,
        _ => partial_attack,
    };
    let outcome = run(surrogate_pre, &ds, &sp, &part, &targets, &acfg, attack_method)?;
    let transferred = attack_method != s.method || surrogate.is_some();
    let report = if transferred {
        transfer_attack(&outcome.best_request, &target, &ds, &sp, &part, &ucfg)?
    } else {
        outcome.report.clone()
    };
    let removed = match &outcome.best_request {
        UnlearnRequest::Whole { weights, .. } => Some(weights.iter().filter(|&&w| w > 0.0).count()),
        UnlearnRequest::Partial { .. } => None,
    };
    result.attack = Some(AttackOutcome {
        attack_method,
        surrogate_model: surrogate_kind,
        transferred,
        best_restart: outcome.best_restart,
        best_outer_loss: outcome.best_outer_loss,
        targets: targets.len(),
        removed,
        report,
    });

    for (k, &kind) in s.baselines.iter().enumerate() {
        let bseed = seeding::derive(seed, 1000 + k as u64);
        let given = (kind == BaselineKind::RandUn).then_some(targets.as_slice());
        let req = baseline_request(kind, &ds, &sp, &part, targets.len(), s.epsilon, given, bseed)?;
        let report = transfer_attack(&req, &target, &ds, &sp, &part, &ucfg)?;
        result.baselines.push(BaselineOutcome { kind, report });
    }
    Ok((result, Some(outcome.best_request)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

type Cell = (RepetitionRecord, Option<UnlearnRequest>);

/// Runs every scenario and repetition, writing
/// `<results_root>/<name>-<hash>/` with the resolved config, per-repetition
/// JSON, `aggregate.csv` and one `plot_<panel>.csv` per plot panel.
/// Failed repetitions are recorded and counted rather than aborting the run.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let reps = config.repetitions_for(opts.scale);
    let dir = opts
        .results_root
        .join(format!("{}-{}", config.name, config.hash(opts.scale)?));
    std::fs::create_dir_all(&dir)?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &RunManifest {
            scale: opts.scale,
            config: config.clone(),
        },
    )?;

    // Load each distinct data source once.
    let mut sources: BTreeMap<PathBuf, Arc<std::result::Result<TabularDataset, String>>> = BTreeMap::new();
    let mut per_scenario = Vec::with_capacity(config.scenarios.len());
    for s in &config.scenarios {
        let entry = match resolve_data_path(s, &opts.data_root) {
            Ok(path) => sources
                .entry(path)
                .or_insert_with(|| Arc::new(load_scenario_data(s, &opts.data_root).map_err(|e| e.to_string())))
                .clone(),
            Err(e) => Arc::new(Err(e.to_string())),
        };
        per_scenario.push(entry);
    }

    let cells: Vec<(usize, usize)> = (0..config.scenarios.len())
        .flat_map(|s| (0..reps).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    let outputs: Vec<Cell> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(si, r)| {
                let s = &config.scenarios[si];
                let seed = repetition_seed(config.seed, r);
                let label = s.directory(si);
                let started = Instant::now();
                let outcome = match per_scenario[si].as_ref() {
                    Ok(data) => run_repetition(s, data, opts.scale, seed),
                    Err(e) => Err(Error::config(format!("dataset unavailable: {e}"))),
                };
                let (status, request) = match outcome {
                    Ok((res, req)) => {
                        log::info!("{label} rep {r}: done in {:.1}s", started.elapsed().as_secs_f64());
                        (RepetitionStatus::Ok(res), req)
                    }
                    Err(e) => {
                        log::warn!("{label} rep {r}: failed: {e}");
                        (RepetitionStatus::Failed { error: e.to_string() }, None)
                    }
                };
                let record = RepetitionRecord {
                    scenario: label,
                    repetition: r,
                    seed,
                    status,
                };
                (record, request)
            })
            .collect()
    });

    let mut records: Vec<Vec<RepetitionRecord>> = vec![Vec::with_capacity(reps); config.scenarios.len()];
    let mut failures = 0;
    for ((si, r), (record, request)) in cells.iter().zip(outputs) {
        let sdir = dir.join(config.scenarios[*si].directory(*si));
        std::fs::create_dir_all(&sdir)?;
        write_json(&sdir.join(format!("rep_{r:02}.json")), &record)?;
        if let Some(request) = request {
            let file = RequestFile {
                request,
                method: Some(config.scenarios[*si].method),
                tau: Some(config.scenarios[*si].tau),
            };
            file.write(&sdir.join(format!("rep_{r:02}.request.json")))?;
        }
        if record.result().is_none() {
            failures += 1;
        }
        records[*si].push(record);
    }

    let rows = aggregate(config, &records);
    write_aggregate(&dir.join(AGGREGATE_FILE), &rows)?;
    write_plot_data(&dir, &rows)?;
    if failures > 0 {
        log::warn!("{failures} of {} repetitions failed; see the per-repetition JSON", cells.len());
    }
    Ok(RunSummary {
        directory: dir,
        records,
        aggregate: rows,
        failures,
    })
}
