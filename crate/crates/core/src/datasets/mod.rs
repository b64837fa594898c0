//! Tabular datasets: loading, encoding, normalisation, sensitive-group
//! partitions and train/test splits.

mod cache;
mod encode;
mod oulad;
mod student;
pub mod synthetic;
mod xapi;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use encode::RawTable;
pub use oulad::{load_oulad, load_oulad_raw};
pub use student::{load_student_performance, load_student_performance_raw};
pub use xapi::{load_xapi, load_xapi_raw};

use crate::error::{Error, Result};
use crate::models::Batch;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Oulad,
    StudentPerformance,
    Xapi,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Oulad, DatasetKind::StudentPerformance, DatasetKind::Xapi];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Oulad => "oulad",
            DatasetKind::StudentPerformance => "student-performance",
            DatasetKind::Xapi => "xapi",
        }
    }

    /// Default location under a data root: a directory for OULAD, a file
    /// for the others.
    pub fn default_path(self) -> &'static str {
        match self {
            DatasetKind::Oulad => "oulad",
            DatasetKind::StudentPerformance => "student-por.csv",
            DatasetKind::Xapi => "xAPI-Edu-Data.csv",
        }
    }

    /// Learning rate used for pre-training on this dataset.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            DatasetKind::Oulad => 0.01,
            DatasetKind::StudentPerformance | DatasetKind::Xapi => 0.001,
        }
    }

    pub fn load(self, path: &Path) -> Result<TabularDataset> {
        if path.extension().is_some_and(|e| e == "ffds") {
            return read_cache(std::fs::File::open(path)?);
        }
        match self {
            DatasetKind::Oulad => load_oulad(path),
            DatasetKind::StudentPerformance => load_student_performance(path),
            DatasetKind::Xapi => load_xapi(path),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Lookup {
                kind: "dataset",
                name: s.to_string(),
            })
    }
}

/// Normalised feature matrix with integer labels and binary sensitive
/// attributes. Every feature lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    name: String,
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    feature_names: Vec<String>,
    sensitive: BTreeMap<String, Vec<u8>>,
}

impl TabularDataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        sensitive: BTreeMap<String, Vec<u8>>,
    ) -> Result<Self> {
        let dim = feature_names.len();
        let n = labels.len();
        if dim == 0 || n == 0 {
            return Err(Error::config("dataset needs at least one sample and one feature"));
        }
        if features.len() != n * dim {
            return Err(Error::config(format!(
                "feature block has {} values, expected {n} x {dim}",
                features.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config(format!("label {bad} outside [0, {num_classes})")));
        }
        if let Some((i, v)) = features.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!(
                "feature value {v} at row {} column {} is outside [0, 1]",
                i / dim,
                i % dim
            )));
        }
        for (attr, groups) in &sensitive {
            if groups.len() != n || groups.iter().any(|&g| g > 1) {
                return Err(Error::config(format!(
                    "sensitive attribute `{attr}` must assign each of the {n} samples to group 0 or 1"
                )));
            }
        }
        Ok(TabularDataset {
            name: name.into(),
            features,
            dim,
            labels,
            num_classes,
            feature_names,
            sensitive,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sensitive_attributes(&self) -> impl Iterator<Item = &str> {
        self.sensitive.keys().map(String::as_str)
    }

    pub fn sensitive(&self, attribute: &str) -> Result<&[u8]> {
        self.sensitive.get(attribute).map(Vec::as_slice).ok_or_else(|| Error::Lookup {
            kind: "sensitive attribute",
            name: attribute.to_string(),
        })
    }

    pub(crate) fn sensitive_map(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.sensitive
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<'_> {
        indices.iter().map(|&i| (self.row(i), self.labels[i])).collect()
    }

    /// A new dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<TabularDataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let sensitive = self
            .sensitive
            .iter()
            .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
            .collect();
        TabularDataset::new(
            self.name.clone(),
            self.feature_names.clone(),
            features,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            sensitive,
        )
    }

    /// Seeded uniform subsample of `rows` samples (no-op if `rows >= n`).
    pub fn subsample(&self, rows: usize, seed: u64) -> Result<TabularDataset> {
        if rows >= self.len() {
            return Ok(self.clone());
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeding::rng(seed, seeding::STREAM_SUBSAMPLE));
        idx.truncate(rows);
        idx.sort_unstable();
        self.subset(&idx)
    }
}

/// Per-column min-max scaling to `[0, 1]`; constant columns become 0.
pub fn min_max_normalize(values: &mut [f64], dim: usize) {
    if dim == 0 {
        return;
    }
    for c in 0..dim {
        let (lo, hi) = values
            .iter()
            .skip(c)
            .step_by(dim)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in values.iter_mut().skip(c).step_by(dim) {
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
}

/// Re-applies min-max normalisation to an already-built dataset.
pub fn renormalize(ds: &TabularDataset) -> TabularDataset {
    let mut out = ds.clone();
    min_max_normalize(&mut out.features, out.dim);
    out
}

/// Two-way split of the samples by one sensitive attribute: group 1 holds
/// value 0, group 2 holds value 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub attribute: String,
    pub s1_indices: Vec<usize>,
    pub s2_indices: Vec<usize>,
    /// Set when one of the groups is empty.
    pub degenerate: bool,
    groups: Vec<u8>,
}

impl GroupPartition {
    pub fn n1(&self) -> usize {
        self.s1_indices.len()
    }

    pub fn n2(&self) -> usize {
        self.s2_indices.len()
    }

    /// 0 for the first group, 1 for the second.
    pub fn group_of(&self, sample: usize) -> u8 {
        self.groups[sample]
    }

    /// Splits `indices` into (group 1, group 2) members, keeping order.
    pub fn restrict(&self, indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
        indices.iter().partition(|&&i| self.groups[i] == 0)
    }

    /// Indices of the smaller and larger group among `indices`.
    pub fn minority_majority(&self, indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let (a, b) = self.restrict(indices);
        if a.len() <= b.len() {
            (a, b)
        } else {
            (b, a)
        }
    }
}

pub fn partition_by_sensitive(ds: &TabularDataset, attribute: &str) -> Result<GroupPartition> {
    let groups = ds.sensitive(attribute)?.to_vec();
    let (s1, s2): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| groups[i] == 0);
    let degenerate = s1.is_empty() || s2.is_empty();
    if degenerate {
        log::warn!("sensitive attribute `{attribute}` puts every sample in one group");
    }
    Ok(GroupPartition {
        attribute: attribute.to_string(),
        s1_indices: s1,
        s2_indices: s2,
        degenerate,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded split, stratified by label. The train share of each label is
/// allocated by largest remainder so the total is `round(fraction * n)`.
pub fn split(ds: &TabularDataset, fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    let n = ds.len();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for i in 0..n {
        by_label[ds.label(i)].push(i);
    }
    let total = ((fraction * n as f64).round() as usize).clamp(1, (n - 1).max(1));
    let exact: Vec<f64> = by_label.iter().map(|g| g.len() as f64 * total as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < by_label[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = seeding::rng(seed, seeding::STREAM_SPLIT);
    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(n - total);
    for (members, q) in by_label.iter_mut().zip(quota) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..q]);
        test.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train_indices: train,
        test_indices: test,
        seed,
        train_fraction: fraction,
    })
}
