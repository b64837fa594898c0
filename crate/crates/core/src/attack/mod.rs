//! Bi-level selective-forgetting attacks on fairness.
//!
//! The whole-removal attack optimises relaxed membership weights in [0, 1];
//! the partial attack optimises per-sample feature modifications in an
//! l-infinity ball. Both ascend the outer objective with projected Adam over
//! several random restarts and keep the best restart.

mod adam;
mod baselines;
mod objective;
mod transfer;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use baselines::{baseline_request, budget_count, select_targets, BaselineKind};
pub use objective::{attack_gradient, outer_objective, remaining_indices, AttackVariables};
pub use transfer::{execute_request, transfer_attack, UnlearningTarget};

use crate::datasets::{GroupPartition, SplitSpec, TabularDataset};
use crate::error::{Error, Result};
use crate::fairness::{FairnessLossKind, FairnessReport};
use crate::models::PretrainedModel;
use crate::seeding;
use crate::unlearning::{HessianScale, UnlearnConfig, UnlearnMethod, UnlearnRequest, DEFAULT_TAU};
use objective::Problem;

pub const DEFAULT_RESTARTS: usize = 4;
pub const DEFAULT_STEPS: usize = 30;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_BUDGET: f64 = 0.2;
pub const DEFAULT_WHOLE_STEP: f64 = 0.05;
/// Partial step size as a fraction of the bound.
pub const DEFAULT_PARTIAL_STEP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub restarts: usize,
    pub steps: usize,
    pub tau: f64,
    pub lambda: f64,
    pub kind: FairnessLossKind,
    /// Fraction of the training split targeted.
    pub budget: f64,
    /// l-infinity bound on partial modifications.
    pub epsilon: f64,
    /// Adam step size; `None` selects the per-variant default.
    pub step_size: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub damping: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub hessian_scale: HessianScale,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let u = UnlearnConfig::default();
        AttackConfig {
            restarts: DEFAULT_RESTARTS,
            steps: DEFAULT_STEPS,
            tau: DEFAULT_TAU,
            lambda: 1.0,
            kind: FairnessLossKind::Individual,
            budget: DEFAULT_BUDGET,
            epsilon: DEFAULT_EPSILON,
            step_size: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            damping: u.damping,
            cg_tol: u.cg_tol,
            cg_max_iters: u.cg_max_iters,
            hessian_scale: u.hessian_scale,
        }
    }
}

impl AttackConfig {
    /// Unlearning settings the attack differentiates through.
    pub fn unlearn_config(&self, method: UnlearnMethod) -> UnlearnConfig {
        UnlearnConfig {
            method,
            tau: self.tau,
            cg_tol: self.cg_tol,
            cg_max_iters: self.cg_max_iters,
            damping: self.damping,
            hessian_scale: self.hessian_scale,
            ..UnlearnConfig::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("the attack needs at least one restart"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("lambda and epsilon must be finite values >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam moment decays must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    /// Outer loss before each optimiser step, then at the final iterate.
    pub losses: Vec<f64>,
}

impl RestartTrace {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("a trace holds at least the initial loss")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// The executable request: discretized weights or clamped deltas.
    pub best_request: UnlearnRequest,
    /// The best restart's final iterate before discretization or clamping.
    pub relaxed_request: UnlearnRequest,
    pub best_restart: usize,
    /// Largest final outer loss over restarts.
    pub best_outer_loss: f64,
    /// Outer loss of `best_request` under the attacked operator.
    pub executed_outer_loss: f64,
    pub trace: Vec<RestartTrace>,
    pub method: UnlearnMethod,
    pub report: FairnessReport,
}

struct RestartOutcome {
    vars: Vec<f64>,
    losses: Vec<f64>,
}

fn run_restart(problem: &Problem<'_>, cfg: &AttackConfig, restart: usize, whole: bool) -> Result<RestartOutcome> {
    let mut rng = seeding::rng(seeding::derive(cfg.seed, restart as u64), seeding::STREAM_ATTACK);
    let p = problem.variable_count(whole);
    let (lo, hi, step) = if whole {
        (0.0, 1.0, cfg.step_size.unwrap_or(DEFAULT_WHOLE_STEP))
    } else {
        let e = cfg.epsilon;
        (-e, e, cfg.step_size.unwrap_or(DEFAULT_PARTIAL_STEP_FRACTION * e))
    };
    let mut vars: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
    let wrap = |v: Vec<f64>| if whole { AttackVariables::Weights(v) } else { AttackVariables::Deltas(v) };
    let mut adam = Adam::new(p, step, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let fail = |step: usize| move |e: Error| Error::Attack { restart, step, source: Box::new(e) };
    for s in 0..cfg.steps {
        let (loss, grad) = problem.value_and_gradient(&wrap(vars.clone())).map_err(fail(s))?;
        losses.push(loss);
        adam.ascend(&mut vars, &grad, lo, hi);
    }
    losses.push(problem.value(&wrap(vars.clone())).map_err(fail(cfg.steps))?);
    Ok(RestartOutcome { vars, losses })
}

#[allow(clippy::too_many_arguments)]
fn run_attack(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    targets: &[usize],
    cfg: &AttackConfig,
    method: UnlearnMethod,
    whole: bool,
) -> Result<AttackResult> {
    cfg.check()?;
    if !whole && !(cfg.epsilon >= 0.0) {
        return Err(Error::config("the partial attack needs a bound >= 0"));
    }
    let ucfg = cfg.unlearn_config(method);
    let problem = Problem::new(pre, ds, &split.train_indices, part, targets, cfg.kind, cfg.lambda, ucfg, whole)?;
    let outcomes = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&problem, cfg, r, whole))
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.losses.last() > outcomes[best].losses.last() {
            best = r;
        }
    }
    let trace: Vec<RestartTrace> = outcomes
        .iter()
        .enumerate()
        .map(|(restart, o)| RestartTrace {
            restart,
            losses: o.losses.clone(),
        })
        .collect();
    let vars = outcomes[best].vars.clone();
    let relaxed = if whole {
        UnlearnRequest::whole(targets.to_vec(), vars)?
    } else {
        UnlearnRequest::partial(targets.to_vec(), ds.dim(), vars, cfg.epsilon)?
    };
    let executable = if whole {
        relaxed.discretize()
    } else {
        let mut r = relaxed.clone();
        r.clamp_to_unit_box(ds);
        r
    };
    let target = UnlearningTarget::Model { pre, method };
    let (report, model) = transfer::execute(&target, ds, split, part, &executable, &ucfg)?;
    let executed_outer_loss = match model {
        Some(m) => outer_objective(ds, problem.remaining(), part, &m, cfg.lambda, cfg.kind)?,
        None => f64::NAN,
    };
    Ok(AttackResult {
        best_request: executable,
        relaxed_request: relaxed,
        best_restart: best,
        best_outer_loss: trace[best].final_loss(),
        executed_outer_loss,
        trace,
        method,
        report,
    })
}

/// Whole-removal attack over relaxed weights, reported through the
/// discretized request.
pub fn whole_attack(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    targets: &[usize],
    cfg: &AttackConfig,
    method: UnlearnMethod,
) -> Result<AttackResult> {
    run_attack(pre, ds, split, part, targets, cfg, method, true)
}

/// Partial-modification attack over deltas in `[-epsilon, epsilon]`,
/// reported through the request clamped to keep modified rows in [0, 1].
pub fn partial_attack(
    pre: &PretrainedModel,
    ds: &TabularDataset,
    split: &SplitSpec,
    part: &GroupPartition,
    targets: &[usize],
    cfg: &AttackConfig,
    method: UnlearnMethod,
) -> Result<AttackResult> {
    run_attack(pre, ds, split, part, targets, cfg, method, false)
}
