//! Outer objective of the bi-level attack and its gradient with respect to
//! the request variables, differentiated through the unlearning update.

use rayon::prelude::*;

use crate::datasets::{GroupPartition, TabularDataset};
use crate::diffmath::{dot, loss_gradient, mixed_second_derivative, sample_gradient, weighted_gradient_sum, ParamVector};
use crate::error::{Error, Result};
use crate::fairness::{FairnessLossKind, FairnessObjective};
use crate::models::{mean_loss, Batch, ModelParams, PretrainedModel};
use crate::unlearning::{inverse_hessian_product, UnlearnConfig, UnlearnMethod, UnlearnRequest};

/// `L_fair - lambda * L_train` over `remaining`, with `L_train` the mean
/// cross-entropy.
pub fn outer_objective(
    ds: &TabularDataset,
    remaining: &[usize],
    part: &GroupPartition,
    model: &ModelParams,
    lambda: f64,
    kind: FairnessLossKind,
) -> Result<f64> {
    let fair = FairnessObjective::new(kind, ds, remaining, part)?.value(model)?;
    let train = mean_loss(model, &ds.batch(remaining))?;
    Ok(fair - lambda * train)
}

/// Variables the attacker optimises.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackVariables {
    /// Relaxed membership weights, one per target.
    Weights(Vec<f64>),
    /// Row-major `P x D` feature modifications.
    Deltas(Vec<f64>),
}

impl AttackVariables {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            AttackVariables::Weights(v) | AttackVariables::Deltas(v) => v,
        }
    }
}

/// Training split minus every target.
pub fn remaining_indices(train_indices: &[usize], targets: &[usize]) -> Vec<usize> {
    let t: std::collections::HashSet<usize> = targets.iter().copied().collect();
    train_indices.iter().copied().filter(|i| !t.contains(i)).collect()
}

/// Everything that stays fixed while the request variables change.
pub(crate) struct Problem<'a> {
    pre: &'a PretrainedModel,
    ds: &'a TabularDataset,
    train_indices: &'a [usize],
    targets: &'a [usize],
    remaining: Vec<usize>,
    fair: FairnessObjective<'a>,
    lambda: f64,
    ucfg: UnlearnConfig,
    /// Whole: per-target gradients at theta*. Partial: empty.
    target_grads: Vec<ParamVector>,
    /// Partial: sum of the targets' unmodified gradients at theta*.
    base_sum: Option<ParamVector>,
}

impl<'a> Problem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        pre: &'a PretrainedModel,
        ds: &'a TabularDataset,
        train_indices: &'a [usize],
        part: &GroupPartition,
        targets: &'a [usize],
        kind: FairnessLossKind,
        lambda: f64,
        ucfg: UnlearnConfig,
        whole: bool,
    ) -> Result<Self> {
        if !ucfg.method.is_differentiable() {
            return Err(Error::config(format!(
                "{} unlearning is not differentiable; attack a first-order surrogate and transfer the request",
                ucfg.method
            )));
        }
        if targets.is_empty() {
            return Err(Error::config("the attack needs at least one target"));
        }
        UnlearnRequest::remove(targets.to_vec())?.validate_against(ds, train_indices)?;
        let remaining = remaining_indices(train_indices, targets);
        if remaining.is_empty() {
            return Err(Error::config("targets cover the whole training split"));
        }
        let fair = FairnessObjective::new(kind, ds, &remaining, part)?;
        let (target_grads, base_sum) = if whole {
            let grads = targets
                .par_iter()
                .map(|&i| sample_gradient(&pre.params, ds.row(i), ds.label(i)))
                .collect::<Result<Vec<_>>>()?;
            (grads, None)
        } else {
            let ones = vec![1.0; targets.len()];
            (Vec::new(), Some(weighted_gradient_sum(&pre.params, &ds.batch(targets), &ones)?))
        };
        Ok(Problem {
            pre,
            ds,
            train_indices,
            targets,
            remaining,
            fair,
            lambda,
            ucfg,
            target_grads,
            base_sum,
        })
    }

    pub(crate) fn variable_count(&self, whole: bool) -> usize {
        if whole {
            self.targets.len()
        } else {
            self.targets.len() * self.ds.dim()
        }
    }

    pub(crate) fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    fn modified_rows(&self, deltas: &[f64]) -> Vec<Vec<f64>> {
        let d = self.ds.dim();
        self.targets
            .iter()
            .enumerate()
            .map(|(p, &i)| self.ds.row(i).iter().zip(&deltas[p * d..(p + 1) * d]).map(|(x, e)| x - e).collect())
            .collect()
    }

    /// Gradient change of the training loss induced by the variables.
    fn change(&self, vars: &AttackVariables) -> Result<ParamVector> {
        match vars {
            AttackVariables::Weights(w) => {
                let mut c = ParamVector::zeros(self.pre.params.theta.len());
                for (g, &wp) in self.target_grads.iter().zip(w) {
                    if wp != 0.0 {
                        c.axpy(-wp, g);
                    }
                }
                Ok(c)
            }
            AttackVariables::Deltas(deltas) => {
                let rows = self.modified_rows(deltas);
                let batch: Batch<'_> = rows.iter().zip(self.targets).map(|(x, &i)| (x.as_slice(), self.ds.label(i))).collect();
                let mut c = weighted_gradient_sum(&self.pre.params, &batch, &vec![1.0; rows.len()])?;
                c.axpy(-1.0, self.base_sum.as_ref().expect("partial problem keeps the base gradient sum"));
                Ok(c)
            }
        }
    }

    /// `A v` with `A = tau I` (first order) or the damped inverse Hessian.
    fn precondition(&self, v: &[f64]) -> Result<ParamVector> {
        match self.ucfg.method {
            UnlearnMethod::SecondOrder => inverse_hessian_product(&self.pre.params, self.ds, self.train_indices, v, &self.ucfg),
            _ => {
                let mut out = ParamVector::from_vec(v.to_vec());
                out.scale(self.ucfg.tau);
                Ok(out)
            }
        }
    }

    pub(crate) fn unlearned(&self, vars: &AttackVariables) -> Result<ModelParams> {
        let step = self.precondition(&self.change(vars)?)?;
        let mut theta = self.pre.params.theta.clone();
        theta.axpy(-1.0, &step);
        self.pre.params.with_theta(theta.check_finite("unlearned parameters")?)
    }

    pub(crate) fn value(&self, vars: &AttackVariables) -> Result<f64> {
        let model = self.unlearned(vars)?;
        let fair = self.fair.value(&model)?;
        let train = mean_loss(&model, &self.ds.batch(&self.remaining))?;
        finite(fair - self.lambda * train)
    }

    pub(crate) fn value_and_gradient(&self, vars: &AttackVariables) -> Result<(f64, Vec<f64>)> {
        let model = self.unlearned(vars)?;
        let batch = self.ds.batch(&self.remaining);
        let (fair, mut u) = self.fair.value_and_gradient(&model)?;
        let train = mean_loss(&model, &batch)?;
        u.axpy(-self.lambda, &loss_gradient(&model, &batch)?);
        let q = self.precondition(&u)?;
        let grad = match vars {
            AttackVariables::Weights(_) => self.target_grads.par_iter().map(|g| dot(g, &q)).collect(),
            AttackVariables::Deltas(deltas) => {
                let rows = self.modified_rows(deltas);
                let parts = rows
                    .par_iter()
                    .zip(self.targets.par_iter())
                    .map(|(x, &i)| mixed_second_derivative(&self.pre.params, x, self.ds.label(i), &q))
                    .collect::<Result<Vec<_>>>()?;
                parts.concat()
            }
        };
        if !grad.iter().all(|g: &f64| g.is_finite()) {
            return Err(Error::numeric("attack gradient"));
        }
        Ok((finite(fair - self.lambda * train)?, grad))
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("outer objective"))
    }
}

/// Gradient of the outer objective over the request variables, through the
/// first- or second-order unlearning update. The inverse Hessian is held
/// fixed with respect to the variables.
#[allow(clippy::too_many_arguments)]
pub fn attack_gradient(
    ucfg: &UnlearnConfig,
    pre: &PretrainedModel,
    ds: &TabularDataset,
    train_indices: &[usize],
    part: &GroupPartition,
    targets: &[usize],
    kind: FairnessLossKind,
    lambda: f64,
    vars: &AttackVariables,
) -> Result<Vec<f64>> {
    let whole = matches!(vars, AttackVariables::Weights(_));
    let expected = if whole { targets.len() } else { targets.len() * ds.dim() };
    if vars.as_slice().len() != expected {
        return Err(Error::config(format!(
            "{} attack variables for {} targets",
            vars.as_slice().len(),
            targets.len()
        )));
    }
    let problem = Problem::new(pre, ds, train_indices, part, targets, kind, lambda, *ucfg, whole)?;
    Ok(problem.value_and_gradient(vars)?.1)
}
