//! Unlearning operators: first-order and second-order influence updates,
//! unrolling SGD, SISA shard retraining, and a retrain-from-scratch oracle.

mod request;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use request::{RequestFile, UnlearnRequest};
pub use crate::training::ShardedModel;

use crate::datasets::{SplitSpec, TabularDataset};
use crate::diffmath::{cg_solve_with_stats, weighted_gradient_sum, CgSettings, HessianOperator, ParamVector};
use crate::error::{Error, Result};
use crate::models::{Architecture, Batch, ModelParams, PretrainedModel, TrainingConfig};
use crate::training::{train_on_indices, train_on_shards};

pub const DEFAULT_TAU: f64 = 2e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlearnMethod {
    FirstOrder,
    SecondOrder,
    UnrollingSgd,
    Sisa,
}

impl UnlearnMethod {
    pub const ALL: [UnlearnMethod; 4] = [
        UnlearnMethod::FirstOrder,
        UnlearnMethod::SecondOrder,
        UnlearnMethod::UnrollingSgd,
        UnlearnMethod::Sisa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnlearnMethod::FirstOrder => "first-order",
            UnlearnMethod::SecondOrder => "second-order",
            UnlearnMethod::UnrollingSgd => "unrolling-sgd",
            UnlearnMethod::Sisa => "sisa",
        }
    }

    /// Whether the attack can differentiate through this operator.
    pub fn is_differentiable(self) -> bool {
        matches!(self, UnlearnMethod::FirstOrder | UnlearnMethod::SecondOrder)
    }
}

impl std::fmt::Display for UnlearnMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for UnlearnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        UnlearnMethod::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Lookup {
                kind: "unlearning method",
                name: format!(
                    "{s} (expected one of: {})",
                    UnlearnMethod::ALL.map(UnlearnMethod::name).join(", ")
                ),
            })
    }
}

/// Normalisation of the loss whose Hessian preconditions second-order
/// unlearning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianScale {
    /// Hessian of the summed training loss (classic influence update).
    #[default]
    Sum,
    /// Hessian of the mean training loss.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    pub tau: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub damping: f64,
    pub hessian_scale: HessianScale,
    pub shards: usize,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        let cg = CgSettings::default();
        UnlearnConfig {
            method: UnlearnMethod::FirstOrder,
            tau: DEFAULT_TAU,
            cg_tol: cg.tol,
            cg_max_iters: 500,
            damping: cg.damping,
            hessian_scale: HessianScale::Sum,
            shards: crate::training::DEFAULT_SHARDS,
        }
    }
}

impl UnlearnConfig {
    pub fn with_method(method: UnlearnMethod) -> Self {
        UnlearnConfig {
            method,
            ..Default::default()
        }
    }

    pub fn cg_settings(&self) -> CgSettings {
        CgSettings {
            tol: self.cg_tol,
            max_iters: self.cg_max_iters,
            damping: self.damping,
        }
    }

    fn check(&self, expected: UnlearnMethod) -> Result<()> {
        if self.method != expected {
            return Err(Error::config(format!(
                "configuration selects {} but {} unlearning was invoked",
                self.method, expected
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Gradient change the request induces on the training loss at `model`:
/// `sum grad l(x_p - delta_p) - sum grad l(x_p)` for partial requests and
/// `-sum w_p grad l(x_p)` for whole requests.
pub fn request_gradient_change(model: &ModelParams, ds: &TabularDataset, req: &UnlearnRequest) -> Result<ParamVector> {
    let targets = req.target_indices();
    match req {
        UnlearnRequest::Whole { weights, .. } => {
            let mut g = weighted_gradient_sum(model, &ds.batch(targets), weights)?;
            g.scale(-1.0);
            Ok(g)
        }
        UnlearnRequest::Partial { .. } => {
            let modified = req.modified_rows(ds);
            let ones = vec![1.0; targets.len()];
            let batch: Batch<'_> = modified.iter().zip(targets).map(|(x, &i)| (x.as_slice(), ds.label(i))).collect();
            let mut g = weighted_gradient_sum(model, &batch, &ones)?;
            let original = weighted_gradient_sum(model, &ds.batch(targets), &ones)?;
            g.axpy(-1.0, &original);
            Ok(g)
        }
    }
}

fn finish(pre: &ModelParams, theta: ParamVector) -> Result<ModelParams> {
    pre.with_theta(theta.check_finite("unlearning update")?)
}

/// `theta* - tau * change`.
pub fn first_order_unlearn(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    req: &UnlearnRequest,
    cfg: &UnlearnConfig,
) -> Result<ModelParams> {
    cfg.check(UnlearnMethod::FirstOrder)?;
    req.validate(ds)?;
    let change = request_gradient_change(&pre.params, ds, req)?;
    let mut theta = pre.params.theta.clone();
    theta.axpy(-cfg.tau, &change);
    finish(&pre.params, theta)
}

/// Damped training-loss Hessian at `theta*` applied inversely to `rhs`.
pub fn inverse_hessian_product(
    model: &ModelParams,
    ds: &TabularDataset,
    train_indices: &[usize],
    rhs: &[f64],
    cfg: &UnlearnConfig,
) -> Result<ParamVector> {
    let batch = ds.batch(train_indices);
    let op = match cfg.hessian_scale {
        HessianScale::Sum => HessianOperator::sum(model, &batch),
        HessianScale::Mean => HessianOperator::mean(model, &batch),
    };
    let (x, stats) = cg_solve_with_stats(&op, rhs, cfg.cg_settings())?;
    log::debug!(
        "inverse Hessian solve: {} iterations, relative residual {:.2e}",
        stats.iterations,
        stats.relative_residual
    );
    Ok(x)
}

/// `theta* - (H + damping I)^-1 change`, H over the training split.
pub fn second_order_unlearn(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    train_indices: &[usize],
    req: &UnlearnRequest,
    cfg: &UnlearnConfig,
) -> Result<ModelParams> {
    cfg.check(UnlearnMethod::SecondOrder)?;
    req.validate_against(ds, train_indices)?;
    let change = request_gradient_change(&pre.params, ds, req)?;
    let step = inverse_hessian_product(&pre.params, ds, train_indices, &change, cfg)?;
    let mut theta = pre.params.theta.clone();
    theta.axpy(-1.0, &step);
    finish(&pre.params, theta)
}

/// `theta* + lr * E * sum w_p grad l(z_p; theta_0)`.
pub fn unrolling_sgd_unlearn(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    req: &UnlearnRequest,
    cfg: &UnlearnConfig,
) -> Result<ModelParams> {
    cfg.check(UnlearnMethod::UnrollingSgd)?;
    req.validate(ds)?;
    let UnlearnRequest::Whole { target_indices, weights } = req else {
        return Err(Error::Contract("unrolling SGD unlearning supports whole requests only".into()));
    };
    if pre.initial_params.arch != pre.params.arch {
        return Err(Error::config("checkpoint lacks initial weights matching the trained model"));
    }
    let g = weighted_gradient_sum(&pre.initial_params, &ds.batch(target_indices), weights)?;
    let tc = pre.training_config;
    let mut theta = pre.params.theta.clone();
    theta.axpy(tc.lr * tc.epochs as f64, &g);
    finish(&pre.params, theta)
}

/// Retrains every shard that held a removed sample, from that shard's
/// recorded configuration. Untouched shards are copied unchanged.
pub fn sisa_unlearn(
    sharded: &ShardedModel,
    ds: &TabularDataset,
    req: &UnlearnRequest,
    cfg: &UnlearnConfig,
) -> Result<ShardedModel> {
    cfg.check(UnlearnMethod::Sisa)?;
    req.validate(ds)?;
    let removed: HashSet<usize> = req.removed_indices()?.into_iter().collect();
    for &i in &removed {
        if sharded.shard_of(i).is_none() {
            return Err(Error::config(format!("target index {i} is not held by any shard")));
        }
    }
    let arch = sharded.arch();
    let mut out = sharded.clone();
    let affected: Vec<usize> = (0..sharded.num_shards())
        .filter(|&k| sharded.assignment[k].iter().any(|i| removed.contains(i)))
        .collect();
    use rayon::prelude::*;
    let retrained = affected
        .par_iter()
        .map(|&k| {
            let keep: Vec<usize> = sharded.assignment[k].iter().copied().filter(|i| !removed.contains(i)).collect();
            if keep.is_empty() {
                return Err(Error::Degenerate(format!("removal empties shard {k}")));
            }
            let model = train_on_indices(ds, &keep, arch, sharded.shards[k].training_config)?.0;
            Ok((k, keep, model))
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, keep, model) in retrained {
        out.assignment[k] = keep;
        out.shards[k] = model;
    }
    Ok(out)
}

/// Shard models trained on `assignment` minus the removed samples, all
/// shards retrained. Reference for [`sisa_unlearn`].
pub fn sisa_full_retrain(
    ds: &TabularDataset,
    assignment: &[Vec<usize>],
    arch: Architecture,
    config: TrainingConfig,
    req: &UnlearnRequest,
) -> Result<ShardedModel> {
    let removed: HashSet<usize> = req.removed_indices()?.into_iter().collect();
    let reduced = assignment
        .iter()
        .map(|s| s.iter().copied().filter(|i| !removed.contains(i)).collect())
        .collect();
    train_on_shards(ds, reduced, arch, config)
}

/// Trains from the original seed on the training split minus the removed
/// samples.
pub fn retrain_oracle(
    ds: &TabularDataset,
    split: &SplitSpec,
    arch: Architecture,
    req: &UnlearnRequest,
    config: TrainingConfig,
) -> Result<ModelParams> {
    req.validate_against(ds, &split.train_indices)?;
    let removed: HashSet<usize> = req.removed_indices()?.into_iter().collect();
    let keep: Vec<usize> = split.train_indices.iter().copied().filter(|i| !removed.contains(i)).collect();
    Ok(train_on_indices(ds, &keep, arch, config)?.0.params)
}

/// Dispatches to the operator selected by `cfg.method`. SISA needs a
/// [`ShardedModel`] and is rejected here.
pub fn unlearn(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    train_indices: &[usize],
    req: &UnlearnRequest,
    cfg: &UnlearnConfig,
) -> Result<ModelParams> {
    match cfg.method {
        UnlearnMethod::FirstOrder => first_order_unlearn(pre, ds, req, cfg),
        UnlearnMethod::SecondOrder => second_order_unlearn(pre, ds, train_indices, req, cfg),
        UnlearnMethod::UnrollingSgd => unrolling_sgd_unlearn(pre, ds, req, cfg),
        UnlearnMethod::Sisa => Err(Error::config("SISA unlearning operates on a sharded model; use sisa_unlearn")),
    }
}
