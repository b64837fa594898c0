//! Mini-batch SGD pre-training and SISA shard training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::{SplitSpec, TabularDataset};
use crate::diffmath::loss_gradient;
use crate::error::{Error, Result};
use crate::models::{self, argmax, Architecture, Classifier, ModelParams, PretrainedModel, TrainingConfig};
use crate::seeding;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_SHARDS: usize = 5;

/// Per-epoch record written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
    pub config: TrainingConfig,
    pub train_size: usize,
}

pub fn train_sgd(
    ds: &TabularDataset,
    split: &SplitSpec,
    arch: Architecture,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<PretrainedModel> {
    let config = TrainingConfig {
        epochs,
        batch_size,
        lr,
        seed,
    };
    Ok(train_on_indices(ds, &split.train_indices, arch, config)?.0)
}

/// Trains from `init(arch, seed)` on the given rows. The batch order is a
/// fresh seeded shuffle every epoch.
pub fn train_on_indices(
    ds: &TabularDataset,
    indices: &[usize],
    arch: Architecture,
    config: TrainingConfig,
) -> Result<(PretrainedModel, TrainingLog)> {
    if !(config.lr > 0.0) || !config.lr.is_finite() {
        return Err(Error::config(format!("learning rate must be > 0, got {}", config.lr)));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::config("epochs and batch size must be at least 1"));
    }
    if indices.is_empty() {
        return Err(Error::config("cannot train on an empty index set"));
    }
    if ds.dim() != arch.input_dim || ds.num_classes() != arch.num_classes {
        return Err(Error::config(format!(
            "dataset shape ({} features, {} classes) does not match the architecture ({}, {})",
            ds.dim(),
            ds.num_classes(),
            arch.input_dim,
            arch.num_classes
        )));
    }

    let initial = models::init(arch, config.seed);
    let mut theta = initial.theta.clone();
    let mut rng = seeding::rng(config.seed, seeding::STREAM_SHUFFLE);
    let mut order = indices.to_vec();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let model = ModelParams {
                arch,
                theta: theta.clone(),
            };
            let batch = ds.batch(chunk);
            let loss = models::mean_loss(&model, &batch).map_err(|_| Error::Training { epoch })?;
            let grad = loss_gradient(&model, &batch).map_err(|_| Error::Training { epoch })?;
            theta.axpy(-config.lr, &grad);
            loss_sum += loss;
            batches += 1;
        }
        let epoch_loss = loss_sum / batches as f64;
        if !epoch_loss.is_finite() || !theta.is_finite() {
            return Err(Error::Training { epoch });
        }
        if epoch >= 10 && epoch_loss > epoch_losses[epoch - 10] {
            log::debug!("training loss rose over the last 10 epochs at epoch {epoch}: {epoch_loss:.5}");
        }
        epoch_losses.push(epoch_loss);
    }
    let model = PretrainedModel {
        params: ModelParams { arch, theta },
        initial_params: initial,
        training_config: config,
    };
    let log = TrainingLog {
        epoch_losses,
        config,
        train_size: indices.len(),
    };
    Ok((model, log))
}

/// Fraction of correct predictions on `indices`.
pub fn evaluate(model: &dyn Classifier, ds: &TabularDataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::config("cannot evaluate on an empty index set"));
    }
    if model.input_dim() != ds.dim() {
        return Err(Error::config("model input dimension does not match the dataset"));
    }
    let correct = indices.iter().filter(|&&i| model.predict_row(ds.row(i)) == ds.label(i)).count();
    Ok(correct as f64 / indices.len() as f64)
}

/// K independently trained shard models with majority-vote prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardedModel {
    pub shards: Vec<PretrainedModel>,
    /// Training indices held by each shard, sorted.
    pub assignment: Vec<Vec<usize>>,
}

impl ShardedModel {
    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    /// Shard holding training index `i`, if any.
    pub fn shard_of(&self, i: usize) -> Option<usize> {
        self.assignment.iter().position(|s| s.binary_search(&i).is_ok())
    }

    pub fn arch(&self) -> Architecture {
        self.shards[0].arch()
    }
}

impl Classifier for ShardedModel {
    fn input_dim(&self) -> usize {
        self.arch().input_dim
    }

    fn predict_row(&self, x: &[f64]) -> usize {
        let mut votes = vec![0.0; self.arch().num_classes];
        for shard in &self.shards {
            votes[shard.params.predict_row(x)] += 1.0;
        }
        argmax(&votes)
    }
}

/// Seed used for shard `k`'s model.
pub fn shard_seed(seed: u64, k: usize) -> u64 {
    seeding::derive(seed, k as u64 + 1)
}

/// Seeded shuffle of the training indices dealt round-robin into K shards.
pub fn assign_shards(train_indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config(format!("SISA needs at least 2 shards, got {k}")));
    }
    if k > train_indices.len() {
        return Err(Error::config(format!(
            "{k} shards requested for only {} training samples",
            train_indices.len()
        )));
    }
    let mut order = train_indices.to_vec();
    order.shuffle(&mut seeding::rng(seed, seeding::STREAM_SHARDS));
    let mut shards = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        shards[pos % k].push(i);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// Trains one model per shard; shard `k` uses [`shard_seed`]`(seed, k)`.
pub fn train_on_shards(
    ds: &TabularDataset,
    assignment: Vec<Vec<usize>>,
    arch: Architecture,
    config: TrainingConfig,
) -> Result<ShardedModel> {
    use rayon::prelude::*;
    if let Some(k) = assignment.iter().position(Vec::is_empty) {
        return Err(Error::config(format!("shard {k} is empty")));
    }
    let shards = assignment
        .par_iter()
        .enumerate()
        .map(|(k, idx)| {
            let cfg = TrainingConfig {
                seed: shard_seed(config.seed, k),
                ..config
            };
            train_on_indices(ds, idx, arch, cfg).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShardedModel { shards, assignment })
}

pub fn train_shard_models(
    ds: &TabularDataset,
    split: &SplitSpec,
    arch: Architecture,
    k: usize,
    config: TrainingConfig,
) -> Result<ShardedModel> {
    let assignment = assign_shards(&split.train_indices, k, config.seed)?;
    train_on_shards(ds, assignment, arch, config)
}
