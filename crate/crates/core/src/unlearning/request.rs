//! Unlearning requests and their JSON file form.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::UnlearnMethod;
use crate::datasets::TabularDataset;
use crate::error::{Error, Result};

/// Slack allowed when checking `|delta| <= bound` after float arithmetic.
const BOUND_SLACK: f64 = 1e-12;

/// A batch of removals (`Whole`) or feature modifications (`Partial`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum UnlearnRequest {
    /// Membership weights in [0, 1]; 1 removes the sample.
    Whole { target_indices: Vec<usize>, weights: Vec<f64> },
    /// Sample `p` is replaced by `x_p - delta_p`. `deltas` is row-major
    /// with `dim` columns.
    Partial {
        target_indices: Vec<usize>,
        dim: usize,
        deltas: Vec<f64>,
        bound: f64,
    },
}

impl UnlearnRequest {
    pub fn whole(target_indices: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let req = UnlearnRequest::Whole { target_indices, weights };
        req.check_shape()?;
        Ok(req)
    }

    /// Discrete removal of every listed index.
    pub fn remove(target_indices: Vec<usize>) -> Result<Self> {
        let weights = vec![1.0; target_indices.len()];
        UnlearnRequest::whole(target_indices, weights)
    }

    pub fn partial(target_indices: Vec<usize>, dim: usize, deltas: Vec<f64>, bound: f64) -> Result<Self> {
        let req = UnlearnRequest::Partial {
            target_indices,
            dim,
            deltas,
            bound,
        };
        req.check_shape()?;
        Ok(req)
    }

    /// Request that removes nothing.
    pub fn empty() -> Self {
        UnlearnRequest::Whole {
            target_indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn target_indices(&self) -> &[usize] {
        match self {
            UnlearnRequest::Whole { target_indices, .. } | UnlearnRequest::Partial { target_indices, .. } => {
                target_indices
            }
        }
    }

    pub fn len(&self) -> usize {
        self.target_indices().len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_indices().is_empty()
    }

    pub fn is_whole(&self) -> bool {
        matches!(self, UnlearnRequest::Whole { .. })
    }

    /// Whole request with every weight exactly 0 or 1.
    pub fn is_discrete(&self) -> bool {
        match self {
            UnlearnRequest::Whole { weights, .. } => weights.iter().all(|&w| w == 0.0 || w == 1.0),
            UnlearnRequest::Partial { .. } => false,
        }
    }

    /// Indices removed by a discrete whole request.
    pub fn removed_indices(&self) -> Result<Vec<usize>> {
        match self {
            UnlearnRequest::Whole { target_indices, weights } if self.is_discrete() => Ok(target_indices
                .iter()
                .zip(weights)
                .filter(|(_, &w)| w == 1.0)
                .map(|(&i, _)| i)
                .collect()),
            _ => Err(Error::Contract(
                "this operation needs a discrete whole request; discretize the weights first".into(),
            )),
        }
    }

    /// Modification row for target `p` of a partial request.
    pub fn delta_row(&self, p: usize) -> Option<&[f64]> {
        match self {
            UnlearnRequest::Partial { dim, deltas, .. } => deltas.get(p * dim..(p + 1) * dim),
            UnlearnRequest::Whole { .. } => None,
        }
    }

    fn check_shape(&self) -> Result<()> {
        match self {
            UnlearnRequest::Whole { target_indices, weights } => {
                if weights.len() != target_indices.len() {
                    return Err(Error::config(format!(
                        "{} weights for {} targets",
                        weights.len(),
                        target_indices.len()
                    )));
                }
                if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                    return Err(Error::config(format!("weight {w} is outside [0, 1]")));
                }
            }
            UnlearnRequest::Partial {
                target_indices,
                dim,
                deltas,
                bound,
            } => {
                if !(*bound >= 0.0) || !bound.is_finite() {
                    return Err(Error::config(format!("bound must be a finite value >= 0, got {bound}")));
                }
                if deltas.len() != target_indices.len() * dim {
                    return Err(Error::config(format!(
                        "delta matrix has {} entries, expected {} x {dim}",
                        deltas.len(),
                        target_indices.len()
                    )));
                }
                if let Some(d) = deltas.iter().find(|d| !d.is_finite() || d.abs() > bound + BOUND_SLACK) {
                    return Err(Error::config(format!("delta entry {d} exceeds the bound {bound}")));
                }
            }
        }
        let mut seen = HashSet::new();
        if let Some(i) = self.target_indices().iter().find(|i| !seen.insert(**i)) {
            return Err(Error::config(format!("target index {i} appears twice")));
        }
        Ok(())
    }

    /// Checks shape, value ranges and that targets are rows of `ds`.
    pub fn validate(&self, ds: &TabularDataset) -> Result<()> {
        self.check_shape()?;
        if let Some(i) = self.target_indices().iter().find(|&&i| i >= ds.len()) {
            return Err(Error::config(format!("target index {i} is out of range for {} rows", ds.len())));
        }
        if let UnlearnRequest::Partial { dim, .. } = self {
            if *dim != ds.dim() && !self.is_empty() {
                return Err(Error::config(format!(
                    "delta rows have {dim} columns but the dataset has {}",
                    ds.dim()
                )));
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus membership in the training split.
    pub fn validate_against(&self, ds: &TabularDataset, train_indices: &[usize]) -> Result<()> {
        self.validate(ds)?;
        let train: HashSet<usize> = train_indices.iter().copied().collect();
        if let Some(i) = self.target_indices().iter().find(|i| !train.contains(i)) {
            return Err(Error::config(format!("target index {i} is not in the training split")));
        }
        Ok(())
    }

    /// Rows `x_p - delta_p` of a partial request.
    pub fn modified_rows(&self, ds: &TabularDataset) -> Vec<Vec<f64>> {
        self.target_indices()
            .iter()
            .enumerate()
            .map(|(p, &i)| match self.delta_row(p) {
                Some(d) => ds.row(i).iter().zip(d).map(|(x, d)| x - d).collect(),
                None => ds.row(i).to_vec(),
            })
            .collect()
    }

    /// Thresholds relaxed weights at 0.5; if nothing survives, keeps the
    /// single largest weight (first on ties).
    pub fn discretize(&self) -> Self {
        match self {
            UnlearnRequest::Whole { target_indices, weights } => {
                let mut discrete: Vec<f64> = weights.iter().map(|&w| if w >= 0.5 { 1.0 } else { 0.0 }).collect();
                if !discrete.is_empty() && discrete.iter().all(|&w| w == 0.0) {
                    let mut best = 0;
                    for (p, &w) in weights.iter().enumerate() {
                        if w > weights[best] {
                            best = p;
                        }
                    }
                    discrete[best] = 1.0;
                }
                UnlearnRequest::Whole {
                    target_indices: target_indices.clone(),
                    weights: discrete,
                }
            }
            partial => partial.clone(),
        }
    }

    /// Clamps deltas so every modified row stays inside [0, 1].
    pub fn clamp_to_unit_box(&mut self, ds: &TabularDataset) {
        if let UnlearnRequest::Partial {
            target_indices,
            dim,
            deltas,
            ..
        } = self
        {
            for (p, &i) in target_indices.iter().enumerate() {
                for (d, &x) in deltas[p * *dim..(p + 1) * *dim].iter_mut().zip(ds.row(i)) {
                    // x - d in [0, 1]  <=>  d in [x - 1, x]
                    *d = d.clamp(x - 1.0, x);
                }
            }
        }
    }
}

/// The JSON artifact an attacker submits: the request plus the operator it
/// targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestFile {
    #[serde(flatten)]
    pub request: UnlearnRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<UnlearnMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl RequestFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: RequestFile = serde_json::from_str(&text)?;
        file.request.check_shape()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
