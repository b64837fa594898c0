//! Executing a request against an unlearning target and reporting the
//! fairness change, including black-box transfer from a surrogate.

use crate::datasets::{GroupPartition, SplitSpec, TabularDataset};
use crate::error::{Error, Result};
use crate::fairness::FairnessReport;
use crate::models::{Classifier, ModelParams, PretrainedModel};
use crate::training::ShardedModel;
use crate::unlearning::{sisa_unlearn, unlearn, UnlearnConfig, UnlearnMethod, UnlearnRequest};

/// A deployed model together with the unlearning operator it runs.
#[derive(Debug, Clone, Copy)]
pub enum UnlearningTarget<'a> {
    /// Single model with a first-order, second-order or unrolling operator.
    Model { pre: &'a PretrainedModel, method: UnlearnMethod },
    /// SISA ensemble.
    Sharded(&'a ShardedModel),
}

impl UnlearningTarget<'_> {
    pub fn method(&self) -> UnlearnMethod {
        match self {
            UnlearningTarget::Model { method, .. } => *method,
            UnlearningTarget::Sharded(_) => UnlearnMethod::Sisa,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            UnlearningTarget::Model { pre, .. } => pre.params.arch.input_dim,
            UnlearningTarget::Sharded(s) => s.arch().input_dim,
        }
    }
}

/// Runs the request and compares test-split AEOD and accuracy before and
/// after. Also returns the unlearned parameters for single-model targets.
pub(crate) fn execute(
    target: &UnlearningTarget<'_>,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    req: &UnlearnRequest,
    ucfg: &UnlearnConfig,
) -> Result<(FairnessReport, Option<ModelParams>)> {
    if target.input_dim() != ds.dim() {
        return Err(Error::config(format!(
            "target model expects {} features but the dataset has {}",
            target.input_dim(),
            ds.dim()
        )));
    }
    let cfg = UnlearnConfig {
        method: target.method(),
        ..*ucfg
    };
    let test = &split.test_indices;
    match target {
        UnlearningTarget::Model { pre, method } => {
            if *method == UnlearnMethod::Sisa {
                return Err(Error::config("SISA targets must be given as a sharded model"));
            }
            let after = unlearn(pre, ds, &split.train_indices, req, &cfg)?;
            let report = FairnessReport::compare(&pre.params, &after, ds, test, part)?;
            Ok((report, Some(after)))
        }
        UnlearningTarget::Sharded(sharded) => {
            let after = sisa_unlearn(sharded, ds, req, &cfg)?;
            let before: &dyn Classifier = *sharded;
            Ok((FairnessReport::compare(before, &after, ds, test, part)?, None))
        }
    }
}

pub fn execute_request(
    target: &UnlearningTarget<'_>,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    req: &UnlearnRequest,
    ucfg: &UnlearnConfig,
) -> Result<FairnessReport> {
    Ok(execute(target, ds, split, part, req, ucfg)?.0)
}

/// Applies a request crafted against a surrogate to a different target.
pub fn transfer_attack(
    request: &UnlearnRequest,
    target: &UnlearningTarget<'_>,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    ucfg: &UnlearnConfig,
) -> Result<FairnessReport> {
    if let UnlearnRequest::Partial { dim, .. } = request {
        if *dim != target.input_dim() {
            return Err(Error::config(format!(
                "request modifies {dim} features but the target expects {}",
                target.input_dim()
            )));
        }
    }
    execute_request(target, ds, split, part, request, ucfg)
}
