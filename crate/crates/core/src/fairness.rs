//! Fairness losses over same-label cross-group pairs, their parameter
//! gradients, and the Absolute Equalized Odds Difference.

use serde::{Deserialize, Serialize};

use crate::datasets::{GroupPartition, TabularDataset};
use crate::diffmath::{logits_vjp, ParamVector};
use crate::error::{Error, Result};
use crate::models::{logits_unchecked, Classifier, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessLossKind {
    /// Mean squared logit distance over qualifying pairs.
    Individual,
    /// Square of the mean logit distance over qualifying pairs.
    Group,
}

impl std::fmt::Display for FairnessLossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FairnessLossKind::Individual => "individual",
            FairnessLossKind::Group => "group",
        })
    }
}

/// Evaluation rows split by group and label, with the group sizes used for
/// normalisation.
#[derive(Debug, Clone)]
pub struct PairSets {
    /// Row indices into the dataset, grouped by label: `(group 1, group 2)`.
    by_label: Vec<(Vec<usize>, Vec<usize>)>,
    n1: usize,
    n2: usize,
}

impl PairSets {
    pub fn new(ds: &TabularDataset, indices: &[usize], part: &GroupPartition) -> Result<Self> {
        let (s1, s2) = part.restrict(indices);
        let mut by_label = vec![(Vec::new(), Vec::new()); ds.num_classes()];
        for &i in &s1 {
            by_label[ds.label(i)].0.push(i);
        }
        for &j in &s2 {
            by_label[ds.label(j)].1.push(j);
        }
        let sets = PairSets {
            by_label,
            n1: s1.len(),
            n2: s2.len(),
        };
        if sets.pair_count() == 0 {
            return Err(Error::Degenerate(format!(
                "no same-label pair across the `{}` groups among {} evaluation samples",
                part.attribute,
                indices.len()
            )));
        }
        Ok(sets)
    }

    pub fn pair_count(&self) -> usize {
        self.by_label.iter().map(|(a, b)| a.len() * b.len()).sum()
    }

    fn norm(&self) -> f64 {
        1.0 / (self.n1 as f64 * self.n2 as f64)
    }

    fn rows(&self) -> Vec<usize> {
        self.by_label.iter().flat_map(|(a, b)| a.iter().chain(b)).copied().collect()
    }
}

/// Loss value plus d(loss)/d(logits) for every row in `sets.rows()` order.
fn loss_and_cotangents(kind: FairnessLossKind, sets: &PairSets, logits: &[Vec<f64>], want_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let c = logits.first().map_or(0, Vec::len);
    let norm = sets.norm();
    let mut cot = if want_grad { vec![vec![0.0; c]; logits.len()] } else { Vec::new() };
    let mut offset = 0;
    match kind {
        FairnessLossKind::Individual => {
            // sum_{i in A, j in B} |Fi - Fj|^2 = |B| sum |Fi|^2 + |A| sum |Fj|^2 - 2 (sum Fi).(sum Fj),
            // evaluated on logits centred per label block to limit cancellation.
            let mut total = 0.0;
            for (a, b) in &sets.by_label {
                let block = &logits[offset..offset + a.len() + b.len()];
                let (fa, fb) = block.split_at(a.len());
                let mut centre = vec![0.0; c];
                for f in block {
                    centre.iter_mut().zip(f).for_each(|(m, v)| *m += v / block.len().max(1) as f64);
                }
                let centred = |f: &Vec<f64>| -> Vec<f64> { f.iter().zip(&centre).map(|(v, m)| v - m).collect() };
                let ca: Vec<Vec<f64>> = fa.iter().map(centred).collect();
                let cb: Vec<Vec<f64>> = fb.iter().map(centred).collect();
                let sum = |rows: &[Vec<f64>]| -> Vec<f64> {
                    let mut s = vec![0.0; c];
                    rows.iter().for_each(|r| s.iter_mut().zip(r).for_each(|(t, v)| *t += v));
                    s
                };
                let sq = |rows: &[Vec<f64>]| -> f64 { rows.iter().flatten().map(|v| v * v).sum() };
                let (sa, sb) = (sum(&ca), sum(&cb));
                let (na, nb) = (a.len() as f64, b.len() as f64);
                total += nb * sq(&ca) + na * sq(&cb) - 2.0 * sa.iter().zip(&sb).map(|(x, y)| x * y).sum::<f64>();
                if want_grad {
                    for (k, f) in ca.iter().enumerate() {
                        for d in 0..c {
                            cot[offset + k][d] = 2.0 * norm * (nb * f[d] - sb[d]);
                        }
                    }
                    for (k, f) in cb.iter().enumerate() {
                        for d in 0..c {
                            cot[offset + a.len() + k][d] = 2.0 * norm * (na * f[d] - sa[d]);
                        }
                    }
                }
                offset += block.len();
            }
            (norm * total.max(0.0), cot)
        }
        FairnessLossKind::Group => {
            let mut dist_sum = 0.0;
            let mut unit_sums: Vec<Vec<f64>> = if want_grad { vec![vec![0.0; c]; logits.len()] } else { Vec::new() };
            for (a, b) in &sets.by_label {
                for ia in 0..a.len() {
                    let fi = &logits[offset + ia];
                    for jb in 0..b.len() {
                        let j = offset + a.len() + jb;
                        let fj = &logits[j];
                        let d: f64 = fi.iter().zip(fj).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                        dist_sum += d;
                        if want_grad && d > 0.0 {
                            for k in 0..c {
                                let u = (fi[k] - fj[k]) / d;
                                unit_sums[offset + ia][k] += u;
                                unit_sums[j][k] -= u;
                            }
                        }
                    }
                }
                offset += a.len() + b.len();
            }
            let mean = norm * dist_sum;
            if want_grad {
                for (out, u) in cot.iter_mut().zip(&unit_sums) {
                    out.iter_mut().zip(u).for_each(|(o, v)| *o = 2.0 * mean * norm * v);
                }
            }
            (mean * mean, cot)
        }
    }
}

/// Precomputed fairness objective over a fixed evaluation population.
#[derive(Debug, Clone)]
pub struct FairnessObjective<'d> {
    ds: &'d TabularDataset,
    kind: FairnessLossKind,
    sets: PairSets,
    rows: Vec<usize>,
}

impl<'d> FairnessObjective<'d> {
    pub fn new(kind: FairnessLossKind, ds: &'d TabularDataset, indices: &[usize], part: &GroupPartition) -> Result<Self> {
        let sets = PairSets::new(ds, indices, part)?;
        let rows = sets.rows();
        Ok(FairnessObjective { ds, kind, sets, rows })
    }

    fn logits(&self, model: &ModelParams) -> Result<Vec<Vec<f64>>> {
        if model.arch.input_dim != self.ds.dim() {
            return Err(Error::config("model input dimension does not match the dataset"));
        }
        Ok(self.rows.iter().map(|&i| logits_unchecked(model, self.ds.row(i))).collect())
    }

    pub fn value(&self, model: &ModelParams) -> Result<f64> {
        let logits = self.logits(model)?;
        Ok(loss_and_cotangents(self.kind, &self.sets, &logits, false).0)
    }

    pub fn value_and_gradient(&self, model: &ModelParams) -> Result<(f64, ParamVector)> {
        let logits = self.logits(model)?;
        let (value, cot) = loss_and_cotangents(self.kind, &self.sets, &logits, true);
        let rows: Vec<&[f64]> = self.rows.iter().map(|&i| self.ds.row(i)).collect();
        let grad = logits_vjp(model, &rows, &cot)?;
        if !value.is_finite() {
            return Err(Error::numeric("fairness loss"));
        }
        Ok((value, grad))
    }
}

pub fn individual_fairness_loss(
    ds: &TabularDataset,
    indices: &[usize],
    part: &GroupPartition,
    model: &ModelParams,
) -> Result<f64> {
    FairnessObjective::new(FairnessLossKind::Individual, ds, indices, part)?.value(model)
}

pub fn group_fairness_loss(ds: &TabularDataset, indices: &[usize], part: &GroupPartition, model: &ModelParams) -> Result<f64> {
    FairnessObjective::new(FairnessLossKind::Group, ds, indices, part)?.value(model)
}

pub fn fairness_loss(
    kind: FairnessLossKind,
    ds: &TabularDataset,
    indices: &[usize],
    part: &GroupPartition,
    model: &ModelParams,
) -> Result<f64> {
    FairnessObjective::new(kind, ds, indices, part)?.value(model)
}

pub fn fairness_loss_gradient(
    kind: FairnessLossKind,
    ds: &TabularDataset,
    indices: &[usize],
    part: &GroupPartition,
    model: &ModelParams,
) -> Result<ParamVector> {
    Ok(FairnessObjective::new(kind, ds, indices, part)?.value_and_gradient(model)?.1)
}

/// Absolute Equalized Odds Difference with class 1 as the positive class.
pub fn aeod(model: &dyn Classifier, ds: &TabularDataset, indices: &[usize], part: &GroupPartition) -> Result<f64> {
    // counts[group][label] = (total, predicted positive)
    let mut counts = [[(0usize, 0usize); 2]; 2];
    for &i in indices {
        let y = ds.label(i);
        if y > 1 {
            return Err(Error::config("AEOD is defined for binary labels only"));
        }
        let cell = &mut counts[part.group_of(i) as usize][y];
        cell.0 += 1;
        if model.predict_row(ds.row(i)) == 1 {
            cell.1 += 1;
        }
    }
    let mut gap = 0.0;
    for y in 0..2 {
        let mut rates = [0.0; 2];
        for g in 0..2 {
            let (total, pos) = counts[g][y];
            if total == 0 {
                return Err(Error::Degenerate(format!(
                    "no samples with {}={g} and label {y} in the evaluation set",
                    part.attribute
                )));
            }
            rates[g] = pos as f64 / total as f64;
        }
        gap += (rates[0] - rates[1]).abs();
    }
    Ok(0.5 * gap)
}

pub fn increment_ratio(before: f64, after: f64) -> Result<f64> {
    if before == 0.0 {
        return Err(Error::UndefinedRatio { delta: after - before });
    }
    Ok((after - before) / before)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub attribute: String,
    pub aeod_before: f64,
    pub aeod_after: f64,
    /// `None` when `aeod_before` is 0; see `aeod_delta` instead.
    pub increment_ratio: Option<f64>,
    pub aeod_delta: f64,
    pub test_acc_before: f64,
    pub test_acc_after: f64,
}

impl FairnessReport {
    pub fn new(attribute: &str, aeod_before: f64, aeod_after: f64, test_acc_before: f64, test_acc_after: f64) -> Self {
        FairnessReport {
            attribute: attribute.to_string(),
            aeod_before,
            aeod_after,
            increment_ratio: increment_ratio(aeod_before, aeod_after).ok(),
            aeod_delta: aeod_after - aeod_before,
            test_acc_before,
            test_acc_after,
        }
    }

    /// Compares a model before and after unlearning on `indices`.
    pub fn compare(
        before: &dyn Classifier,
        after: &dyn Classifier,
        ds: &TabularDataset,
        indices: &[usize],
        part: &GroupPartition,
    ) -> Result<Self> {
        Ok(FairnessReport::new(
            &part.attribute,
            aeod(before, ds, indices, part)?,
            aeod(after, ds, indices, part)?,
            crate::training::evaluate(before, ds, indices)?,
            crate::training::evaluate(after, ds, indices)?,
        ))
    }
}
